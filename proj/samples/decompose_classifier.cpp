// Entropy decomposition H = I + E[H] for a random two-class network fed with
// an uncertain image, at growing input variance, plus the zero-variance limit.

#include <cmath>
#include <cstdio>

#include "uncprop/uncprop.hpp"

int main() {
  using namespace uncprop;
  MlpSpec spec;
  spec.input_dim = 16;
  spec.hidden = {8};
  spec.activation = Activation::tanh;
  spec.head = HeadKind::softmax;
  spec.num_classes = 2;
  const Mlp net(spec, 7);
  auto f = [&](const Image& s) { return net.forward_categorical(s.data); };

  Image mean(4, 4);
  for (std::size_t i = 0; i < mean.size(); ++i) mean.data[i] = 0.1 * static_cast<double>(i % 5);
  std::printf("%10s %10s %10s %10s\n", "pixel var", "I", "E[H]", "H");
  for (double lv : {-50.0, -6.0, -3.0, -1.0, 0.0, 1.0}) {
    const DiagGaussianImage x = DiagGaussianImage(mean, Image(4, 4)).with_log_var(lv);
    const auto j = propagate_classification(x, f, McConfig{256, {1, 0}, 1});
    std::printf("%10.3g %10.4f %10.4f %10.4f\n", std::exp(lv), j.mutual_info, j.cond_entropy, j.entropy);
  }
}
