#include "weakseg/optim.hpp"

#include <cmath>

namespace weakseg {

Tensor xavier_uniform(Index fan_in, Index fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    return Tensor(std::move(w), true);
}

void adam_step(const NamedParams& params, std::vector<Matrix>& m, std::vector<Matrix>& v, std::int64_t& step,
               const AdamConfig& config) {
    if (m.size() != params.size() || v.size() != params.size())
        throw ContractError("adam_step: moment buffers do not match parameters");
    ++step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].second;
        if (!p.has_grad()) continue;
        const Matrix& g = p.node()->grad;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
        p.mutable_value().array() -=
            config.learning_rate * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + config.epsilon);
        p.zero_grad();
    }
}

Adam::Adam(NamedParams params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& [name, p] : params_) {
        m_.push_back(Matrix::Zero(p.rows(), p.cols()));
        v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
}

void Adam::step() { adam_step(params_, m_, v_, steps_, config_); }

void Adam::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace weakseg
