#include "qtraj/autodiff.hpp"

#include <cmath>

namespace qtraj::ad {

void adam_step(AdamState& st, std::span<double> theta,
               std::span<const double> grad) {
  if (theta.size() != st.m.size() || grad.size() != st.m.size())
    throw InvalidArgument("adam_step: dimension mismatch");
  st.step += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    const double mh = st.m[i] / c1;
    const double vh = st.v[i] / c2;
    theta[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
  }
}

}  // namespace qtraj::ad
