#pragma once

#include <string>
#include <vector>

#include "weakseg/data_io.hpp"
#include "weakseg/optim.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg {

/// Gated recurrent scan over precomputed input gates (T x 3H, blocks
/// [reset, update, candidate]) with recurrent weights H x 3H:
///   r = sig(x_r + h W_r + b_r), z = sig(x_z + h W_z + b_z)
///   n = tanh(x_n + r * (h W_n + b_n)), h' = (1 - z) n + z h
/// Returns the T x H hidden states, in frame order for either direction.
Tensor gru_scan(const Tensor& input_gates, const Tensor& w_h, const Tensor& b_h, bool reverse);

struct EmbedderConfig {
    Index input_dim = 64;
    Index hidden = 256;  // per direction
    Index output_dim = 64;
    Index rate = 16;     // temporal downsampling stride

    void validate() const;
};

struct GruParams {
    Tensor w_x, b_x, w_h, b_h;
};

struct EmbedderParams {
    EmbedderConfig config;
    GruParams forward, backward;
    Tensor proj_w, proj_b;

    static EmbedderParams init(const EmbedderConfig& config, Rng& rng);
    NamedParams named() const;
};

/// Frames kept by downsampling: offset, offset + rate, ... below T; frame 0
/// when that set is empty.
std::vector<Index> downsample_indices(Index frames, Index rate, Index offset);

/// Mean of the projected bidirectional states at the downsampled frames.
Tensor embed(const Matrix& frames, const EmbedderParams& params, Index offset);
/// Inference form (offset 0, no graph), as a plain vector.
RowVector embed_vector(const Matrix& frames, const EmbedderParams& params);

struct ContrastiveConfig {
    double sigma = 0.5;   // similarity threshold
    double margin = 0.5;
    Index batch = 64;     // pairs per update
    Index epochs = 30;
    double learning_rate = 1e-3;

    void validate() const;
};

/// Cosine distance when similar (s >= sigma), hinge max(0, m - d) otherwise.
Tensor contrastive_pair_loss(const Tensor& u, const Tensor& v, double similarity, const ContrastiveConfig& cfg);

struct EmbeddedPair {
    Tensor u, v;
    double similarity;
};

/// Mean pair loss over a nonempty batch.
Tensor batch_loss(const std::vector<EmbeddedPair>& pairs, const ContrastiveConfig& cfg);

struct EmbedderTraining {
    EmbedderParams params;
    std::vector<double> batch_losses;
};

/// Each epoch shuffles the videos, pairs neighbours without replacement and
/// takes one Adam step per batch of pairs.
EmbedderTraining train_embedder(const Dataset& data, const std::vector<std::size_t>& videos,
                                const EmbedderConfig& config, const ContrastiveConfig& cfg, Rng& rng);

// --- retrieval -----------------------------------------------------------------

double cosine_distance(const RowVector& u, const RowVector& v);

class EmbeddingIndex {
public:
    struct Entry {
        std::string video_id;
        RowVector embedding;
        ActionSequence transcript;
    };

    void add(std::string video_id, RowVector embedding, ActionSequence transcript);
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    Index dim() const { return entries_.empty() ? 0 : entries_.front().embedding.size(); }

    /// Entry positions by ascending cosine distance, then video id.
    std::vector<std::size_t> ranked(const RowVector& query) const;

    /// Transcripts of the nearest entries, duplicates skipped, until k
    /// distinct ones are found or the index runs out.
    std::vector<ActionSequence> retrieve(const RowVector& query, Index k) const;

    void save(const fs::path& path) const;
    static EmbeddingIndex load(const fs::path& path);

private:
    std::vector<Entry> entries_;
};

EmbeddingIndex build_index(const Dataset& data, const std::vector<std::size_t>& videos, const EmbedderParams& params,
                           unsigned jobs = 1);

}  // namespace weakseg
