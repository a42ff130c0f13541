#include "weakseg/viterbi.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

namespace weakseg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Scores this close count as tied; summation order alone must not break a tie.
bool better(double v, double best) { return best == kNegInf ? v > best : v > best + 1e-12 * (1.0 + std::abs(best)); }

struct Problem {
    Index T;
    Index N;
    Index l_max;
    Matrix prefix;  // (T+1) x A cumulative log-likelihoods
    std::vector<Vector> tables;  // per transcript element
};

bool feasible(Index T, Index N, Index l_max) { return N >= 1 && T >= N && N * l_max >= T; }

Problem prepare(const Matrix& loglik, const ActionSequence& transcript, const LengthModel& lengths) {
    Problem p{loglik.rows(), static_cast<Index>(transcript.size()), lengths.support(loglik.rows()), {}, {}};
    if (loglik.cols() != lengths.classes())
        throw DimensionError("decode: likelihood columns do not match the length model");
    for (Index a : transcript)
        if (a < 0 || a >= loglik.cols()) throw std::out_of_range("decode: transcript action out of range");
    p.prefix = Matrix::Zero(p.T + 1, loglik.cols());
    for (Index t = 0; t < p.T; ++t) p.prefix.row(t + 1) = p.prefix.row(t) + loglik.row(t);
    std::map<Index, Vector> by_class;
    for (Index a : transcript) {
        auto it = by_class.find(a);
        if (it == by_class.end()) it = by_class.emplace(a, lengths.log_table(a, p.l_max)).first;
        p.tables.push_back(it->second);
    }
    return p;
}

/// Forward pass over transcript positions. Fills `back` (N x (T+1) start
/// frames) when non-null and returns the final score.
double forward(const Problem& p, const ActionSequence& transcript, std::vector<std::vector<Index>>* back) {
    const Index T = p.T, N = p.N;
    std::vector<double> prev(static_cast<std::size_t>(T + 1), kNegInf), cur(prev.size());
    prev[0] = 0.0;
    if (back) back->assign(static_cast<std::size_t>(N), std::vector<Index>(static_cast<std::size_t>(T + 1), -1));
    for (Index n = 1; n <= N; ++n) {
        const Index a = transcript[static_cast<std::size_t>(n - 1)];
        const Vector& len = p.tables[static_cast<std::size_t>(n - 1)];
        std::fill(cur.begin(), cur.end(), kNegInf);
        // Segment n ends at t; n-1 earlier segments need n-1 frames and the
        // N-n later ones need N-n.
        for (Index t = n; t <= T - (N - n); ++t) {
            const Index lo = std::max<Index>(n - 1, t - p.l_max);
            double best = kNegInf;
            Index arg = -1;
            const double end = p.prefix(t, a);
            for (Index s = lo; s < t; ++s) {
                const double prior = prev[static_cast<std::size_t>(s)];
                if (prior == kNegInf) continue;
                const double v = prior + (end - p.prefix(s, a)) + len(t - s);
                if (better(v, best)) {
                    best = v;
                    arg = s;
                }
            }
            cur[static_cast<std::size_t>(t)] = best;
            if (back) (*back)[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(t)] = arg;
        }
        std::swap(prev, cur);
    }
    return prev[static_cast<std::size_t>(T)];
}

}  // namespace

Alignment decode(const Matrix& loglik, const ActionSequence& transcript, const LengthModel& lengths) {
    const Index T = loglik.rows();
    const Index N = static_cast<Index>(transcript.size());
    if (!feasible(T, N, lengths.support(T)))
        throw InfeasibleError("decode: transcript of " + std::to_string(N) + " actions cannot cover " +
                              std::to_string(T) + " frames with lengths up to " + std::to_string(lengths.support(T)));
    Problem p = prepare(loglik, transcript, lengths);
    std::vector<std::vector<Index>> back;
    const double best = forward(p, transcript, &back);
    if (best == kNegInf) throw InfeasibleError("decode: no alignment has finite score");
    Alignment out{transcript, std::vector<Index>(static_cast<std::size_t>(N)), best};
    Index t = T;
    for (Index n = N; n >= 1; --n) {
        const Index s = back[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(t)];
        out.lengths[static_cast<std::size_t>(n - 1)] = t - s;
        t = s;
    }
    return out;
}

double score(const Matrix& loglik, const ActionSequence& transcript, const LengthModel& lengths) {
    const Index T = loglik.rows();
    if (!feasible(T, static_cast<Index>(transcript.size()), lengths.support(T))) return kNegInf;
    return forward(prepare(loglik, transcript, lengths), transcript, nullptr);
}

Selection select_transcript(const Matrix& loglik, const std::vector<ActionSequence>& candidates,
                            const LengthModel& lengths, unsigned jobs) {
    if (candidates.empty()) throw std::invalid_argument("select_transcript: no candidate transcripts");
    std::vector<double> scores(candidates.size(), kNegInf);
    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(candidates.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < candidates.size(); ++i) scores[i] = score(loglik, candidates[i], lengths);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next++) < candidates.size();) scores[i] = score(loglik, candidates[i], lengths);
            });
        for (auto& th : pool) th.join();
    }
    std::size_t best = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (scores[i] != kNegInf && (best == candidates.size() || scores[i] > scores[best])) best = i;
    if (best == candidates.size()) throw InfeasibleError("select_transcript: every candidate is infeasible");
    return Selection{best, decode(loglik, candidates[best], lengths)};
}

}  // namespace weakseg
