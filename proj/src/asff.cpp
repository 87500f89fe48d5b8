#include "mmfuse/asff.hpp"

namespace mmfuse {

void check_modalities(const Shape& rgb, const Shape& ir) {
  if (rgb != ir) {
    throw ShapeError("RGB feature shape " + to_string(rgb) + " does not match IR feature shape " + to_string(ir));
  }
}

template <typename T>
BasicTensor<T> attention_fusion_forward(const BasicTensor<T>& rgb, const BasicTensor<T>& ir,
                                        const AsffParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var a = tape.constant(rgb), b = tape.constant(ir);
  return tape.value(attention_fusion(tape, a, b, bind_params(tape, p, "asff", false)));
}

template <typename T>
BasicTensor<T> dfm_forward(const BasicTensor<T>& f_a, const DfmParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var x = tape.constant(f_a);
  return tape.value(dfm(tape, x, bind_params(tape, p, "dfm", false)));
}

template <typename T>
BasicTensor<T> fm_forward(const BasicTensor<T>& f_dr, const FmParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var x = tape.constant(f_dr);
  return tape.value(fm(tape, x, bind_params(tape, p, "fm", false)));
}

template <typename T>
BasicTensor<T> fmb_forward(const BasicTensor<T>& f_a, const DfmParamsT<BasicTensor<T>>& dfm_p,
                           const FmParamsT<BasicTensor<T>>& fm_p) {
  Tape<T> tape;
  const Var x = tape.constant(f_a);
  return tape.value(fmb(tape, x, bind_params(tape, dfm_p, "dfm", false), bind_params(tape, fm_p, "fm", false)));
}

template <typename T>
AsffResult<T> asff_stages(const BasicTensor<T>& rgb, const BasicTensor<T>& ir, const AsffParamsT<BasicTensor<T>>& p,
                          std::size_t groups) {
  Tape<T> tape;
  const Var a = tape.constant(rgb), b = tape.constant(ir);
  const AsffStages s = asff(tape, a, b, bind_params(tape, p, "asff", false), groups);
  return {tape.value(s.attention), tape.value(s.modulation), tape.value(s.shuffled)};
}

template <typename T>
BasicTensor<T> asff_forward(const BasicTensor<T>& rgb, const BasicTensor<T>& ir,
                            const AsffParamsT<BasicTensor<T>>& p, std::size_t groups) {
  return asff_stages(rgb, ir, p, groups).fused;
}

#define MMFUSE_INSTANTIATE_ASFF(T)                                                                              \
  template BasicTensor<T> attention_fusion_forward(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                                   const AsffParamsT<BasicTensor<T>>&);                         \
  template BasicTensor<T> dfm_forward(const BasicTensor<T>&, const DfmParamsT<BasicTensor<T>>&);                \
  template BasicTensor<T> fm_forward(const BasicTensor<T>&, const FmParamsT<BasicTensor<T>>&);                  \
  template BasicTensor<T> fmb_forward(const BasicTensor<T>&, const DfmParamsT<BasicTensor<T>>&,                 \
                                      const FmParamsT<BasicTensor<T>>&);                                        \
  template AsffResult<T> asff_stages(const BasicTensor<T>&, const BasicTensor<T>&,                              \
                                     const AsffParamsT<BasicTensor<T>>&, std::size_t);                          \
  template BasicTensor<T> asff_forward(const BasicTensor<T>&, const BasicTensor<T>&,                            \
                                       const AsffParamsT<BasicTensor<T>>&, std::size_t);

MMFUSE_INSTANTIATE_ASFF(float)
MMFUSE_INSTANTIATE_ASFF(double)

}  // namespace mmfuse
