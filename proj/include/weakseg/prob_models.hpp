#pragma once

#include <algorithm>

#include "weakseg/alignment.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg {

inline constexpr double kProbabilityFloor = 1e-10;

/// Class frequencies p(a) estimated from frame occupancy.
class ClassPrior {
public:
    ClassPrior() = default;
    explicit ClassPrior(Index classes, double floor = kProbabilityFloor);

    Index classes() const { return counts_.size(); }
    double floor() const { return floor_; }

    /// Floored and renormalized; uniform while no frames have been counted.
    RowVector probabilities() const;
    RowVector log_probabilities() const { return probabilities().array().log(); }

    void add_frames(const ActionSequence& labels);
    void update(const Alignment& alignment) { add_frames(alignment.frame_labels()); }

    const RowVector& counts() const { return counts_; }
    void set_counts(RowVector counts);

private:
    RowVector counts_;
    double floor_ = kProbabilityFloor;
};

/// Per-class Poisson lengths, renormalized over [1, L_max], with rates equal
/// to the running mean of decoded lengths.
class LengthModel {
public:
    LengthModel() = default;
    /// `max_length` 0 means no cap beyond the video length.
    LengthModel(Index classes, double initial_rate, Index max_length = 0);

    Index classes() const { return sums_.size(); }
    Index max_length() const { return max_length_; }
    double initial_rate() const { return initial_rate_; }
    double rate(Index action) const;

    /// Cap actually used for a video of T frames.
    Index support(Index frames) const { return max_length_ > 0 ? std::min(max_length_, frames) : frames; }

    /// log p(l | a) for 1 <= l <= l_max.
    double log_prob(Index length, Index action, Index l_max) const;
    /// Entries 1..l_max of log p(. | a); entry 0 is -inf.
    Vector log_table(Index action, Index l_max) const;

    void add_length(Index action, Index length);
    void update(const Alignment& alignment);

    const RowVector& sums() const { return sums_; }
    const RowVector& counts() const { return counts_; }
    void set_state(RowVector sums, RowVector counts);

private:
    RowVector sums_;
    RowVector counts_;
    double initial_rate_ = 1.0;
    Index max_length_ = 0;
};

/// log renormalized Poisson pmf over [1, l_max] for every l.
Vector poisson_log_table(double rate, Index l_max);

/// log p(e|a) = log p(a|e) - log p(a), posteriors floored before the log.
Matrix to_likelihood(const Matrix& log_posteriors, const ClassPrior& prior);

}  // namespace weakseg
