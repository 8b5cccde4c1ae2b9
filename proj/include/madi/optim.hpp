#pragma once

#include <map>

#include "madi/model.hpp"

namespace madi {

// Linear warmup to a constant peak. `step` is 1-based (first update = 1).
struct TrainSchedule {
    double peak_lr = 1e-4;
    int warmup_steps = 1000;
    int batch_size = 32;
    int epochs = 1;

    double lr(int step) const {
        if (warmup_steps <= 0) return peak_lr;
        const double f = static_cast<double>(step) / static_cast<double>(warmup_steps);
        return peak_lr * (f < 1.0 ? f : 1.0);
    }
};

// Adam with decoupled weight decay (decay defaults to 0 and stays there in
// every training stage; the hook exists so the update rule is complete).
class Adam {
  public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    // Applies one update to every non-frozen tensor. Missing grad entries are
    // treated as zero (moments still decay). Grads for frozen or unknown
    // tensors, or with mismatched shapes, are contract violations.
    void step(ModelState& state, const GradMap& grads, double lr);

    int steps_taken() const { return t_; }
    void reset() {
        t_ = 0;
        m_.clear();
        v_.clear();
    }

  private:
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace madi
