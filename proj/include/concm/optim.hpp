#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "concm/error.hpp"
#include "concm/matrix.hpp"

namespace concm {

/// Linear warmup to lr_max, then cosine decay to zero.
struct CosineSchedule {
  double lr_max = 0.01;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;

  double at(std::size_t step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
    const double progress =
        std::min(1.0, static_cast<double>(step - std::min(step, warmup_steps)) / static_cast<double>(span));
    return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// SGD with heavy-ball momentum over a fixed list of parameter matrices.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}

  void step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, double lr) {
    require(params.size() == grads.size(), ErrorKind::ShapeError, "sgd: param/grad count");
    if (velocity_.empty())
      for (Matrix* p : params) velocity_.emplace_back(p->rows(), p->cols());
    for (std::size_t k = 0; k < params.size(); ++k) {
      Matrix& v = velocity_[k];
      auto vd = v.data();
      auto gd = grads[k].data();
      auto pd = params[k]->data();
      for (std::size_t i = 0; i < vd.size(); ++i) {
        vd[i] = momentum_ * vd[i] + gd[i];
        pd[i] -= lr * vd[i];
      }
    }
  }

 private:
  double momentum_;
  std::vector<Matrix> velocity_;
};

}  // namespace concm
