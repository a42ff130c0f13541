#pragma once

#include <vector>

#include "weakseg/alignment.hpp"
#include "weakseg/prob_models.hpp"

namespace weakseg {

/// Best segmentation of T frames into the transcript's elements in order,
/// maximizing frame log-likelihoods plus log length probabilities. Ties,
/// up to a relative 1e-12, resolve toward the earliest boundary. Throws
/// InfeasibleError when the transcript cannot fit.
Alignment decode(const Matrix& loglik, const ActionSequence& transcript, const LengthModel& lengths);

/// Score of `decode` without backtracking; -inf when infeasible.
double score(const Matrix& loglik, const ActionSequence& transcript, const LengthModel& lengths);

struct Selection {
    std::size_t index = 0;  // position in the candidate list
    Alignment alignment;
};

/// Highest-scoring candidate (first wins ties) and its alignment. `jobs`
/// threads score candidates in parallel; the result does not depend on it.
Selection select_transcript(const Matrix& loglik, const std::vector<ActionSequence>& candidates,
                            const LengthModel& lengths, unsigned jobs = 1);

}  // namespace weakseg
