#include "weakseg/prob_models.hpp"

#include <cmath>
#include <limits>

namespace weakseg {

ClassPrior::ClassPrior(Index classes, double floor) : counts_(RowVector::Zero(classes)), floor_(floor) {
    if (classes < 1) throw std::invalid_argument("ClassPrior: needs at least one class");
    if (!(floor > 0.0) || floor * static_cast<double>(classes) >= 1.0)
        throw std::invalid_argument("ClassPrior: floor must be in (0, 1/classes)");
}

RowVector ClassPrior::probabilities() const {
    const Index A = classes();
    const double total = counts_.sum();
    if (total <= 0.0) return RowVector::Constant(A, 1.0 / static_cast<double>(A));
    RowVector p = counts_ / total;
    std::vector<bool> floored(static_cast<std::size_t>(A), false);
    // Floored classes take exactly `floor`; the rest share what is left in
    // proportion to their counts. Repeat until no rescaled class drops below.
    for (bool changed = true; changed;) {
        changed = false;
        double kept = 0.0;
        Index n_floored = 0;
        for (Index a = 0; a < A; ++a) {
            if (floored[static_cast<std::size_t>(a)])
                ++n_floored;
            else
                kept += counts_(a);
        }
        const double mass = 1.0 - floor_ * static_cast<double>(n_floored);
        for (Index a = 0; a < A; ++a) {
            if (floored[static_cast<std::size_t>(a)]) {
                p(a) = floor_;
                continue;
            }
            p(a) = kept > 0.0 ? mass * counts_(a) / kept : floor_;
            if (p(a) < floor_) {
                floored[static_cast<std::size_t>(a)] = true;
                changed = true;
            }
        }
    }
    return p;
}

void ClassPrior::add_frames(const ActionSequence& labels) {
    for (Index a : labels) {
        if (a < 0 || a >= classes()) throw std::out_of_range("ClassPrior: action index out of range");
        counts_(a) += 1.0;
    }
}

void ClassPrior::set_counts(RowVector counts) {
    if (counts.size() != classes() || (counts.array() < 0.0).any())
        throw std::invalid_argument("ClassPrior: bad counts");
    counts_ = std::move(counts);
}

LengthModel::LengthModel(Index classes, double initial_rate, Index max_length)
    : sums_(RowVector::Zero(classes)), counts_(RowVector::Zero(classes)), initial_rate_(initial_rate),
      max_length_(max_length) {
    if (classes < 1) throw std::invalid_argument("LengthModel: needs at least one class");
    if (!(initial_rate > 0.0) || !std::isfinite(initial_rate))
        throw std::invalid_argument("LengthModel: initial rate must be positive");
    if (max_length < 0) throw std::invalid_argument("LengthModel: max length must be >= 0");
}

double LengthModel::rate(Index action) const {
    if (action < 0 || action >= classes()) throw std::out_of_range("LengthModel: action index out of range");
    return counts_(action) > 0.0 ? sums_(action) / counts_(action) : initial_rate_;
}

Vector poisson_log_table(double rate, Index l_max) {
    if (l_max < 1) throw std::invalid_argument("poisson_log_table: l_max must be >= 1");
    Vector t(l_max + 1);
    t(0) = -std::numeric_limits<double>::infinity();
    const double log_rate = std::log(rate);
    double peak = -std::numeric_limits<double>::infinity();
    for (Index l = 1; l <= l_max; ++l) {
        const double x = static_cast<double>(l);
        t(l) = x * log_rate - rate - std::lgamma(x + 1.0);
        peak = std::max(peak, t(l));
    }
    double z = 0.0;
    for (Index l = 1; l <= l_max; ++l) z += std::exp(t(l) - peak);
    const double log_z = peak + std::log(z);
    t.tail(l_max).array() -= log_z;
    return t;
}

double LengthModel::log_prob(Index length, Index action, Index l_max) const {
    if (length < 1 || length > l_max)
        throw std::out_of_range("LengthModel: length " + std::to_string(length) + " outside [1, " +
                                std::to_string(l_max) + "]");
    return poisson_log_table(rate(action), l_max)(length);
}

Vector LengthModel::log_table(Index action, Index l_max) const { return poisson_log_table(rate(action), l_max); }

void LengthModel::add_length(Index action, Index length) {
    if (action < 0 || action >= classes()) throw std::out_of_range("LengthModel: action index out of range");
    if (length < 1) throw std::invalid_argument("LengthModel: lengths must be >= 1");
    sums_(action) += static_cast<double>(length);
    counts_(action) += 1.0;
}

void LengthModel::update(const Alignment& alignment) {
    for (std::size_t n = 0; n < alignment.lengths.size(); ++n) add_length(alignment.transcript[n], alignment.lengths[n]);
}

void LengthModel::set_state(RowVector sums, RowVector counts) {
    if (sums.size() != classes() || counts.size() != classes()) throw std::invalid_argument("LengthModel: bad state");
    sums_ = std::move(sums);
    counts_ = std::move(counts);
}

Matrix to_likelihood(const Matrix& log_posteriors, const ClassPrior& prior) {
    if (log_posteriors.cols() != prior.classes())
        throw DimensionError("to_likelihood: " + std::to_string(log_posteriors.cols()) + " posterior columns vs " +
                             std::to_string(prior.classes()) + " prior classes");
    const double log_floor = std::log(prior.floor());
    Matrix out = log_posteriors.cwiseMax(log_floor);
    out.rowwise() -= prior.log_probabilities();
    return out;
}

}  // namespace weakseg
