#include "mmfuse/config.hpp"

#include "mmfuse/error.hpp"

namespace mmfuse {

const char* module_name(ModuleKind kind) { return kind == ModuleKind::asff ? "asff" : "fatm"; }

ModuleKind parse_module_kind(const std::string& name) {
  if (name == "asff") return ModuleKind::asff;
  if (name == "fatm") return ModuleKind::fatm;
  throw ConfigError("unknown module '" + name + "' (expected asff or fatm)");
}

void ModuleConfig::validate(ModuleKind kind) const {
  if (batch == 0 || channels == 0 || height == 0 || width == 0) {
    throw ConfigError("batch, channels, height and width must be >= 1");
  }
  if (kind == ModuleKind::asff) {
    if (channels % 2 != 0) throw ConfigError("ASFF needs an even channel count, got " + std::to_string(channels));
    if (groups == 0 || channels % groups != 0) {
      throw ConfigError("shuffle groups " + std::to_string(groups) + " do not divide " + std::to_string(channels) +
                        " channels");
    }
    if (cam_kernel % 2 == 0) throw ConfigError("CAM kernel size must be odd, got " + std::to_string(cam_kernel));
  } else {
    if (lcam_ratio == 0 || channels % lcam_ratio != 0) {
      throw ConfigError("LCAM ratio " + std::to_string(lcam_ratio) + " does not divide " + std::to_string(channels) +
                        " channels");
    }
  }
}

}  // namespace mmfuse
