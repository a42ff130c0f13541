#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "weakseg/tensor.hpp"

namespace weakseg {

namespace fs = std::filesystem;

/// Ordered action indices, e.g. a transcript a_1..a_N or a frame labelling.
using ActionSequence = std::vector<Index>;

/// Per-frame feature vectors x_1..x_T of one video (T x D).
struct FeatureSequence {
    std::string video_id;
    Matrix frames;
    std::string source_tag;

    Index length() const { return frames.rows(); }
    Index dim() const { return frames.cols(); }
};

/// The action vocabulary with a dense name <-> index map.
class ActionSet {
public:
    ActionSet() = default;
    explicit ActionSet(std::vector<std::string> names, std::optional<Index> background = std::nullopt);

    Index size() const { return static_cast<Index>(names_.size()); }
    const std::string& name(Index index) const;
    const std::vector<std::string>& names() const { return names_; }
    /// Index of `name`; throws std::out_of_range for an unknown action.
    Index index(std::string_view name) const;
    std::optional<Index> find(std::string_view name) const;

    std::optional<Index> background() const { return background_; }
    void set_background(std::optional<Index> background);

private:
    std::vector<std::string> names_;
    std::map<std::string, Index, std::less<>> lookup_;
    std::optional<Index> background_;
};

struct Transcript {
    std::string video_id;
    ActionSequence actions;
};

struct FrameLabels {
    std::string video_id;
    ActionSequence labels;
};

struct ManifestEntry {
    std::string video_id;
    fs::path features;
    fs::path labels;  // empty when the video has no frame labels
    fs::path transcript;
};

/// A dataset on disk: manifest.tsv, mapping.txt and optional train/test
/// split files, all in one directory.
struct DatasetManifest {
    fs::path root;
    fs::path mapping;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> train;
    std::vector<std::string> test;

    const ManifestEntry& entry(std::string_view video_id) const;
};

// --- FSEQ binary features ---------------------------------------------------

FeatureSequence read_features(const fs::path& path);
/// Values are stored as 32-bit floats; non-representable values are rounded.
void write_features(const FeatureSequence& seq, const fs::path& path);

// --- text formats ------------------------------------------------------------

/// "<index> <name>" per line; indices must cover 0..n-1 exactly once. Names
/// "SIL", "background" or "BG" mark the background action.
ActionSet read_mapping(const fs::path& path);
void write_mapping(const ActionSet& actions, const fs::path& path);

Transcript read_transcript(const fs::path& path, const ActionSet& actions);
void write_transcript(const Transcript& transcript, const ActionSet& actions, const fs::path& path);

FrameLabels read_labels(const fs::path& path, const ActionSet& actions);
void write_labels(const FrameLabels& labels, const ActionSet& actions, const fs::path& path);

DatasetManifest read_manifest(const fs::path& path);
void write_manifest(const DatasetManifest& manifest, const fs::path& path);

std::vector<std::string> read_split(const fs::path& path);
void write_split(const std::vector<std::string>& ids, const fs::path& path);

/// Collapses runs of equal labels, giving the transcript of a labelling.
ActionSequence collapse_runs(const ActionSequence& labels);

// --- in-memory dataset ----------------------------------------------------------

struct Video {
    FeatureSequence features;
    Transcript transcript;
    std::optional<FrameLabels> labels;
};

struct Dataset {
    ActionSet actions;
    std::vector<Video> videos;
    std::vector<std::size_t> train;  // indices into videos
    std::vector<std::size_t> test;

    const Video& video(std::string_view id) const;
    std::vector<std::size_t> split(std::string_view name) const;
};

/// Parses every file the manifest references and validates lengths/labels.
Dataset load_dataset(const DatasetManifest& manifest);
Dataset load_dataset(const fs::path& manifest_path);

// --- synthetic generator ----------------------------------------------------------

struct SyntheticSpec {
    Index num_classes = 8;
    Index feature_dim = 16;
    /// Row-stochastic action transitions; self-transition mass is ignored so
    /// that transcripts never repeat an action back to back.
    Matrix transition;
    RowVector initial;   // first-action distribution; uniform when empty
    Matrix means;        // num_classes x feature_dim
    double noise = 1.0;  // sigma_f
    RowVector duration_rates;
    Index videos = 80;
    Index test_videos = 20;
    Index min_transcript = 4;
    Index max_transcript = 7;
    /// Optional bounds on T; videos outside are resampled.
    Index min_frames = 0;
    Index max_frames = 0;
    /// With templates > 0, transcripts are drawn once per template and each
    /// video copies one, dropping each action with probability template_edit.
    Index templates = 0;
    double template_edit = 0.0;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument describing the first broken invariant.
    void validate() const;

    /// Reads the JSON form. Missing matrices are derived from `clusters`,
    /// `within_cluster`, `separation` and `duration_rate`.
    static SyntheticSpec from_json_file(const fs::path& path);
    static SyntheticSpec from_json_text(const std::string& text);
};

/// Block-structured transitions: classes are split into `clusters` groups
/// and a transition stays within the group with probability `within`.
Matrix clustered_transitions(Index classes, Index clusters, double within);
/// Means at `separation * noise` along distinct axes (random directions when
/// classes exceed the dimension).
Matrix separated_means(Index classes, Index dim, double separation, double noise, Rng& rng);

/// Writes features/, labels/, transcripts/, mapping.txt, manifest.tsv,
/// train.split and test.split under `out_dir`.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir);

}  // namespace weakseg
