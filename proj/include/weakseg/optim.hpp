#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "weakseg/rng.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Xavier/Glorot uniform initialization of a fan_in x fan_out weight.
Tensor xavier_uniform(Index fan_in, Index fan_out, Rng& rng);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Holds handles to the parameters it updates.
class Adam {
public:
    Adam() = default;
    Adam(NamedParams params, AdamConfig config);

    /// One update from the accumulated gradients, which are then cleared.
    void step();
    void zero_grad();

    std::int64_t steps() const { return steps_; }
    const AdamConfig& config() const { return config_; }
    const NamedParams& params() const { return params_; }

    /// Moment buffers, in parameter order; exposed for checkpointing.
    std::vector<Matrix>& first_moments() { return m_; }
    std::vector<Matrix>& second_moments() { return v_; }
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }
    void set_steps(std::int64_t steps) { steps_ = steps; }

private:
    NamedParams params_;
    AdamConfig config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::int64_t steps_ = 0;
};

/// Functional form: one Adam update over `params` with explicit state.
void adam_step(const NamedParams& params, std::vector<Matrix>& m, std::vector<Matrix>& v, std::int64_t& step,
               const AdamConfig& config);

}  // namespace weakseg
