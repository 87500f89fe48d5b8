#include "mmfuse/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mmfuse {

namespace {

constexpr char kTensorMagic[4] = {'L', 'A', 'S', 'F'};
constexpr char kArchiveMagic[4] = {'L', 'A', 'S', 'W'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t& offset, const char* what)
      : bytes_(bytes), offset_(offset), what_(what) {}

  void need(std::size_t n) const {
    if (bytes_.size() < offset_ || bytes_.size() - offset_ < n) {
      throw FormatError(std::string(what_) + " is truncated at byte " + std::to_string(offset_));
    }
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[offset_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[offset_] | (bytes_[offset_ + 1] << 8));
    offset_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 4;
    return v;
  }
  void magic(const char (&expected)[4]) {
    need(4);
    if (std::memcmp(&bytes_[offset_], expected, 4) != 0) {
      throw FormatError(std::string(what_) + " has bad magic (expected \"" + std::string(expected, 4) + "\")");
    }
    offset_ += 4;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&bytes_[offset_]), n);
    offset_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t& offset_;
  const char* what_;
};

ParamKind kind_from_name(const std::string& name) {
  const auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".running_mean")) return ParamKind::running_mean;
  if (ends_with(".running_var")) return ParamKind::running_var;
  return ParamKind::weight;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 16 + 4 * t.numel());
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u16(out, kFormatVersion);
  put_u8(out, kDtypeFloat32);
  put_u8(out, 4);
  for (std::size_t d : t.shape().dims()) {
    if (d > 0xffffffffu) throw FormatError("tensor extent does not fit in 32 bits");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  Reader in(bytes, offset, "tensor");
  in.magic(kTensorMagic);
  const std::uint16_t version = in.u16();
  if (version != kFormatVersion) throw VersionError("unsupported tensor version " + std::to_string(version));
  const std::uint8_t dtype = in.u8();
  if (dtype != kDtypeFloat32) throw VersionError("unsupported tensor dtype code " + std::to_string(dtype));
  const std::uint8_t rank = in.u8();
  if (rank != 4) throw FormatError("tensor rank must be 4, got " + std::to_string(rank));
  std::array<std::size_t, 4> dims{};
  for (auto& d : dims) {
    d = in.u32();
    if (d == 0) throw FormatError("tensor extent of 0");
  }
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  in.need(4 * shape.numel());
  Tensor t(shape);
  for (auto& v : t.data()) v = std::bit_cast<float>(in.u32());
  return t;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) {
    throw FormatError("tensor file has " + std::to_string(bytes.size() - offset) + " trailing bytes");
  }
  return t;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing '" + path.string() + "'");
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

WeightArchive archive_from_entries(std::vector<NamedTensor> entries) {
  for (auto& e : entries) e.kind = kind_from_name(e.name);
  return entries;
}

std::vector<std::uint8_t> encode_archive(const WeightArchive& archive) {
  std::set<std::string> seen;
  std::vector<std::uint8_t> out(std::begin(kArchiveMagic), std::end(kArchiveMagic));
  put_u16(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(archive.size()));
  for (const auto& e : archive) {
    if (!seen.insert(e.name).second) throw FormatError("duplicate archive entry '" + e.name + "'");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const auto body = encode_tensor(e.tensor);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

WeightArchive decode_archive(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  Reader in(bytes, offset, "weight archive");
  in.magic(kArchiveMagic);
  const std::uint16_t version = in.u16();
  if (version != kFormatVersion) throw VersionError("unsupported archive version " + std::to_string(version));
  const std::uint32_t count = in.u32();
  std::vector<NamedTensor> entries;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = in.u32();
    std::string name = in.text(len);
    if (!seen.insert(name).second) throw FormatError("duplicate archive entry '" + name + "'");
    Tensor t = decode_tensor(bytes, offset);
    entries.push_back({std::move(name), std::move(t), ParamKind::weight});
  }
  if (offset != bytes.size()) {
    throw FormatError("weight archive has " + std::to_string(bytes.size() - offset) + " trailing bytes");
  }
  return archive_from_entries(std::move(entries));
}

void write_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  write_file(path, encode_archive(archive));
}

WeightArchive read_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

void validate_manifest(const WeightArchive& archive, const std::vector<TensorSpec>& manifest) {
  if (archive.size() != manifest.size()) {
    throw FormatError("archive holds " + std::to_string(archive.size()) + " entries, manifest expects " +
                      std::to_string(manifest.size()));
  }
  for (std::size_t i = 0; i < archive.size(); ++i) {
    if (archive[i].name != manifest[i].name) {
      throw FormatError("archive entry " + std::to_string(i) + " is '" + archive[i].name + "', manifest expects '" +
                        manifest[i].name + "'");
    }
    if (archive[i].tensor.shape() != manifest[i].shape) {
      throw FormatError("archive entry '" + archive[i].name + "' has shape " + to_string(archive[i].tensor.shape()) +
                        ", manifest expects " + to_string(manifest[i].shape));
    }
  }
}

WeightArchive init_weights(const ModuleConfig& config, ModuleKind which, std::uint64_t seed) {
  return which == ModuleKind::asff ? to_archive(init_asff_params(config, seed))
                                   : to_archive(init_fatm_params(config, seed));
}

namespace {
const Tensor& find_entry(const WeightArchive& archive, const std::string& name) {
  for (const auto& e : archive) {
    if (e.name == name) return e.tensor;
  }
  throw FormatError("weight archive has no entry '" + name + "'");
}
}  // namespace

ModuleConfig infer_config(const WeightArchive& archive, ModuleKind which, ModuleConfig config) {
  if (which == ModuleKind::asff) {
    config.channels = find_entry(archive, "rgb_dw.weight").shape().n;
    config.cam_kernel = find_entry(archive, "rgb_cam.conv.weight").shape().h;
  } else {
    config.channels = find_entry(archive, "cbh_conv.weight").shape().n;
    const std::size_t mid = find_entry(archive, "lcam.reduce.weight").shape().n;
    if (mid == 0 || config.channels % mid != 0) throw FormatError("LCAM bottleneck width does not divide C");
    config.lcam_ratio = config.channels / mid;
  }
  return config;
}

AsffParams asff_params_from_archive(const WeightArchive& archive, const ModuleConfig& config) {
  validate_manifest(archive, weight_manifest(config, ModuleKind::asff));
  AsffParams p = make_asff_params(config);
  assign_params(p, archive);
  return p;
}

FatmParams fatm_params_from_archive(const WeightArchive& archive, const ModuleConfig& config) {
  validate_manifest(archive, weight_manifest(config, ModuleKind::fatm));
  FatmParams p = make_fatm_params(config);
  assign_params(p, archive);
  return p;
}

std::string format_cost_table(const CostReport& report) {
  std::ostringstream os;
  const auto& c = report.config;
  os << "# module=" << report.module << " N=" << c.batch << " C=" << c.channels << " H=" << c.height
     << " W=" << c.width << " G=" << c.groups << " r=" << c.lcam_ratio << " k=" << c.cam_kernel << "\n";
  os << std::left << std::setw(28) << "layer" << std::setw(16) << "kind" << std::right << std::setw(12) << "params"
     << std::setw(10) << "buffers" << std::setw(16) << "macs" << std::setw(14) << "other_ops" << "\n";
  const auto row = [&](const std::string& name, const std::string& kind, std::uint64_t params, std::uint64_t buffers,
                       std::uint64_t macs, std::uint64_t other) {
    os << std::left << std::setw(28) << name << std::setw(16) << kind << std::right << std::setw(12) << params
       << std::setw(10) << buffers << std::setw(16) << macs << std::setw(14) << other << "\n";
  };
  for (const auto& l : report.layers) row(l.name, l.kind, l.params, l.buffers, l.macs, l.other_ops);
  row("total", "-", report.total_params, report.total_buffers, report.total_macs, report.total_other_ops);
  os << "params_M " << std::setprecision(6) << report.params_millions() << "\n";
  os << "gflops " << std::setprecision(6) << report.gflops() << "\n";
  return os.str();
}

std::string format_cost_json(const CostReport& report) {
  nlohmann::ordered_json j;
  j["module"] = report.module;
  const auto& c = report.config;
  j["config"] = {{"batch", c.batch},   {"channels", c.channels},     {"height", c.height},
                 {"width", c.width},   {"groups", c.groups},         {"lcam_ratio", c.lcam_ratio},
                 {"cam_kernel", c.cam_kernel}};
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"name", l.name},
                      {"kind", l.kind},
                      {"params", l.params},
                      {"buffers", l.buffers},
                      {"macs", l.macs},
                      {"other_ops", l.other_ops}});
  }
  j["layers"] = std::move(layers);
  j["total"] = {{"params", report.total_params},
                {"buffers", report.total_buffers},
                {"macs", report.total_macs},
                {"other_ops", report.total_other_ops},
                {"gflops", report.gflops()}};
  return j.dump(2) + "\n";
}

}  // namespace mmfuse
