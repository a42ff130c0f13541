#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "weakseg/alignment.hpp"
#include "weakseg/data_io.hpp"
#include "weakseg/embedder.hpp"
#include "weakseg/encoder.hpp"
#include "weakseg/prob_models.hpp"

namespace weakseg {

/// Every tunable of training and inference. Stored as flat key=value text.
struct PipelineConfig {
    Index window = 32;  // 0: one window spanning twice the longest video
    Index model_dim = 64;
    Index heads = 4;
    Index head_dim = 64;
    Index ff_dim = 256;
    Index layers = 1;
    double dropout = 0.5;
    PeVariant pe = PeVariant::sinusoidal;
    PeTarget pe_target = PeTarget::window;
    double learning_rate = 1e-3;
    Index delta = 10;
    Index epochs = 15;
    Index max_length = 0;

    Index embed_hidden = 256;
    Index embed_dim = 64;
    Index embed_rate = 16;
    double sigma = 0.5;
    double margin = 0.5;
    Index batch = 64;
    Index embed_epochs = 30;
    double embed_learning_rate = 1e-3;

    std::uint64_t seed = 0;
    unsigned jobs = 1;

    /// Throws std::invalid_argument for an unknown key or unparsable value.
    void set(std::string_view key, std::string_view value);
    /// Lines of key=value; '#' starts a comment.
    void apply_text(const std::string& text);
    static PipelineConfig from_file(const fs::path& path);
    std::vector<std::string> keys() const;
    std::string get(std::string_view key) const;
    /// Sorted key=value lines that reproduce this config exactly.
    std::string to_text() const;
    void validate() const;

    EncoderConfig encoder(Index input_dim, Index classes) const;
    EmbedderConfig embedder(Index input_dim) const;
    ContrastiveConfig contrastive() const;
};

/// Everything needed to resume training or run inference.
struct TrainState {
    enum class Mode { weak, full };

    Mode mode = Mode::weak;
    PipelineConfig config;  // window resolved to the size actually used
    EncoderParams encoder;
    std::vector<Matrix> adam_m, adam_v;
    std::int64_t adam_steps = 0;
    ClassPrior prior;
    LengthModel lengths;
    std::int64_t iteration = 0;
    std::int64_t skipped = 0;  // infeasible training decodes
    /// Distinct training transcripts in first-seen order.
    std::vector<ActionSequence> transcripts;
    std::vector<double> epoch_accuracy;  // training alignment accuracy; NaN without labels
    std::vector<double> epoch_loss;
    std::vector<double> loss_trace;  // one entry per update

    Index classes() const { return encoder.config.classes; }
    void save(const fs::path& path) const;
    static TrainState load(const fs::path& path);
};

/// Observation points inside the training loop.
struct TrainHooks {
    /// Stages, in order: "encode", "decode", "loss", "backward", "optimizer",
    /// "update_prior", "update_lengths".
    std::function<void(std::string_view stage, std::int64_t iteration)> on_stage;
    std::function<void(Index epoch, double accuracy, double loss)> on_epoch;
    std::function<void(const std::string& message)> on_warning;
};

/// Distinct transcripts of `videos`, first-seen order.
std::vector<ActionSequence> distinct_transcripts(const Dataset& data, const std::vector<std::size_t>& videos);

/// Window size for a config: 0 becomes twice the longest video in `data`.
Index resolve_window(const PipelineConfig& config, const Dataset& data);

/// Online weak training, one video and its transcript per update.
TrainState train_weak(const Dataset& data, const PipelineConfig& config, const TrainHooks& hooks = {});

/// Frame-classification training from ground-truth labels. The prior and
/// length models are fitted to the labels afterwards, for inference only.
TrainState train_full(const Dataset& data, const PipelineConfig& config, const TrainHooks& hooks = {});

/// Frame log-likelihoods log p(x|a) of one video under a frozen state.
Matrix likelihoods(const TrainState& state, const FeatureSequence& features);

Alignment infer_align(const TrainState& state, const FeatureSequence& features, const ActionSequence& transcript);

struct Selector {
    enum class Kind { brute, embed };
    Kind kind = Kind::brute;
    Index k = 1;
    const EmbeddingIndex* index = nullptr;
    const EmbedderParams* embedder = nullptr;
};

struct SegmentResult {
    ActionSequence transcript;
    Alignment alignment;
    std::size_t candidates = 0;
    double select_seconds = 0.0;  // retrieval and transcript scoring
    double seconds = 0.0;         // including the encoder
};

/// Picks a transcript from the training set (brute) or from the retrieved
/// neighbours (embed) and aligns it. Retrieved candidates are scored in the
/// training-set order, so k covering every transcript reproduces brute.
SegmentResult infer_segment(const TrainState& state, const FeatureSequence& features, const Selector& selector,
                            unsigned jobs = 1);
/// Same, from precomputed likelihoods.
SegmentResult select_and_align(const TrainState& state, const Matrix& loglik, const FeatureSequence& features,
                               const Selector& selector, unsigned jobs = 1);

enum class EvalMode { align, segment };
EvalMode parse_eval_mode(std::string_view s);
std::string to_string(EvalMode m);

struct VideoResult {
    std::string video_id;
    Index frames = 0;
    Index correct = 0;
    Index non_bg_frames = 0;
    Index non_bg_correct = 0;
    double tsim = 0.0;
    double seconds = 0.0;
    std::size_t candidates = 0;
    bool infeasible = false;
    ActionSequence transcript;  // predicted or given
    ActionSequence labels;      // predicted frame labels, empty when infeasible
};

struct EvalReport {
    EvalMode mode = EvalMode::align;
    std::vector<VideoResult> videos;
    double accuracy = 0.0;
    std::optional<double> accuracy_no_bg;  // absent without non-background frames
    double mean_tsim = 0.0;
    double seconds = 0.0;

    std::string table(bool no_bg = true) const;
    /// Header row, then one row per video and a final "ALL" row.
    std::string delimited(char sep = ',') const;
};

/// Compares one prediction to ground truth. Predicted labels shorter than
/// the truth count the missing frames as wrong.
VideoResult score_video(std::string video_id, const ActionSequence& truth_labels,
                        const ActionSequence& truth_transcript, const ActionSequence& predicted_labels,
                        const ActionSequence& predicted_transcript, std::optional<Index> background);

/// Micro-averaged accuracies and mean TSim over the per-video rows.
EvalReport aggregate(EvalMode mode, std::vector<VideoResult> videos);

/// Runs inference on every listed video (in parallel with `jobs`) and
/// scores it against its frame labels.
EvalReport evaluate(const TrainState& state, const Dataset& data, const std::vector<std::size_t>& videos,
                    EvalMode mode, const Selector& selector = {}, unsigned jobs = 1);

// --- embedder persistence -------------------------------------------------------------

void save_embedder(const EmbedderParams& params, const fs::path& path);
EmbedderParams load_embedder(const fs::path& path);

/// Repr of a transcript as space-separated action names.
std::string format_transcript(const ActionSequence& t, const ActionSet& actions);

}  // namespace weakseg
