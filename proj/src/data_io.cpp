#include "weakseg/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"

namespace weakseg {

namespace {

constexpr char kFseqMagic[4] = {'F', 'S', 'E', 'Q'};
constexpr std::uint32_t kFseqVersion = 1;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

/// Non-blank lines; blank lines are only tolerated at the end of the file.
std::vector<std::string> read_lines(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(std::string("cannot open ") + what + " file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    std::size_t blank_at = 0;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        std::string t = trim(line);
        if (t.empty()) {
            if (blank_at == 0) blank_at = number;
            continue;
        }
        if (blank_at != 0)
            throw FormatError(std::string("blank line inside ") + what + " file " + path.string(), blank_at, true);
        lines.push_back(std::move(t));
    }
    if (lines.empty()) throw FormatError(std::string("empty ") + what + " file " + path.string(), 1, true);
    return lines;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

ActionSequence resolve_names(const std::vector<std::string>& names, const ActionSet& actions, const fs::path& path,
                             const char* what) {
    ActionSequence out;
    out.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto idx = actions.find(names[i]);
        if (!idx)
            throw FormatError(std::string("unknown action '") + names[i] + "' in " + what + " file " + path.string(),
                              i + 1, true);
        out.push_back(*idx);
    }
    return out;
}

void write_names(const ActionSequence& seq, const ActionSet& actions, const fs::path& path) {
    auto out = open_out(path);
    for (Index a : seq) out << actions.name(a) << '\n';
}

bool is_background_name(std::string_view name) { return name == "SIL" || name == "background" || name == "BG"; }

}  // namespace

std::string binio::slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- ActionSet ------------------------------------------------------------------

ActionSet::ActionSet(std::vector<std::string> names, std::optional<Index> background) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i].empty()) throw std::invalid_argument("ActionSet: empty action name");
        if (!lookup_.emplace(names_[i], static_cast<Index>(i)).second)
            throw std::invalid_argument("ActionSet: duplicate action name '" + names_[i] + "'");
    }
    set_background(background);
}

const std::string& ActionSet::name(Index index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("ActionSet: index " + std::to_string(index));
    return names_[static_cast<std::size_t>(index)];
}

Index ActionSet::index(std::string_view name) const {
    auto found = find(name);
    if (!found) throw std::out_of_range("ActionSet: unknown action '" + std::string(name) + "'");
    return *found;
}

std::optional<Index> ActionSet::find(std::string_view name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

void ActionSet::set_background(std::optional<Index> background) {
    if (background && (*background < 0 || *background >= size()))
        throw std::out_of_range("ActionSet: background index out of range");
    background_ = background;
}

// --- FSEQ -------------------------------------------------------------------------

FeatureSequence read_features(const fs::path& path) {
    binio::Reader r(binio::slurp(path.string()));
    const std::string magic = r.bytes(4, "magic");
    if (magic != std::string(kFseqMagic, 4)) throw FormatError("bad FSEQ magic in " + path.string(), 0);
    const std::uint64_t version_at = r.offset();
    if (r.u32("version") != kFseqVersion) throw FormatError("unsupported FSEQ version", version_at);
    const std::uint64_t t_at = r.offset();
    const std::uint32_t frames = r.u32("frame count");
    const std::uint32_t dim = r.u32("feature dimension");
    if (frames == 0) throw FormatError("FSEQ frame count T must be >= 1", t_at);
    if (dim == 0) throw FormatError("FSEQ feature dimension D must be >= 1", t_at + 4);
    const std::uint64_t payload = std::uint64_t{frames} * dim * 4;
    r.need(payload, "FSEQ payload");
    if (r.remaining() != payload) throw FormatError("trailing bytes after FSEQ payload", r.offset() + payload);

    FeatureSequence seq;
    seq.video_id = path.stem().string();
    seq.source_tag = "fseq";
    seq.frames.resize(frames, dim);
    for (Index i = 0; i < seq.frames.size(); ++i) {
        const std::uint64_t at = r.offset();
        const float v = r.f32("FSEQ value");
        if (!std::isfinite(v)) throw FormatError("non-finite FSEQ value", at);
        seq.frames.data()[i] = static_cast<double>(v);
    }
    return seq;
}

void write_features(const FeatureSequence& seq, const fs::path& path) {
    if (seq.length() < 1 || seq.dim() < 1) throw std::invalid_argument("write_features: empty sequence");
    if (seq.length() > std::numeric_limits<std::uint32_t>::max() || seq.dim() > std::numeric_limits<std::uint32_t>::max())
        throw std::invalid_argument("write_features: sequence too large for FSEQ");
    std::ostringstream buf(std::ios::binary);
    buf.write(kFseqMagic, 4);
    binio::put_u32(buf, kFseqVersion);
    binio::put_u32(buf, static_cast<std::uint32_t>(seq.length()));
    binio::put_u32(buf, static_cast<std::uint32_t>(seq.dim()));
    for (Index i = 0; i < seq.frames.size(); ++i) {
        const float v = static_cast<float>(seq.frames.data()[i]);
        if (!std::isfinite(v)) throw std::invalid_argument("write_features: value not representable as float32");
        binio::put_f32(buf, v);
    }
    auto out = open_out(path, std::ios::binary);
    binio::put_bytes(out, buf.str());
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// --- text formats -----------------------------------------------------------------------

ActionSet read_mapping(const fs::path& path) {
    const auto lines = read_lines(path, "mapping");
    std::vector<std::string> names(lines.size());
    std::vector<bool> seen(lines.size(), false);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::istringstream ls(lines[i]);
        long long index = -1;
        std::string name, extra;
        if (!(ls >> index >> name) || (ls >> extra))
            throw FormatError("mapping line must be '<index> <name>' in " + path.string(), i + 1, true);
        if (index < 0 || index >= static_cast<long long>(lines.size()) || seen[static_cast<std::size_t>(index)])
            throw FormatError("mapping index " + std::to_string(index) + " is not dense/unique in " + path.string(),
                              i + 1, true);
        seen[static_cast<std::size_t>(index)] = true;
        names[static_cast<std::size_t>(index)] = name;
    }
    std::optional<Index> background;
    for (std::size_t i = 0; i < names.size(); ++i)
        if (is_background_name(names[i])) background = static_cast<Index>(i);
    try {
        return ActionSet(std::move(names), background);
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string(e.what()) + " in " + path.string(), 1, true);
    }
}

void write_mapping(const ActionSet& actions, const fs::path& path) {
    auto out = open_out(path);
    for (Index i = 0; i < actions.size(); ++i) out << i << ' ' << actions.name(i) << '\n';
}

Transcript read_transcript(const fs::path& path, const ActionSet& actions) {
    return Transcript{path.stem().string(), resolve_names(read_lines(path, "transcript"), actions, path, "transcript")};
}

void write_transcript(const Transcript& transcript, const ActionSet& actions, const fs::path& path) {
    write_names(transcript.actions, actions, path);
}

FrameLabels read_labels(const fs::path& path, const ActionSet& actions) {
    return FrameLabels{path.stem().string(), resolve_names(read_lines(path, "labels"), actions, path, "labels")};
}

void write_labels(const FrameLabels& labels, const ActionSet& actions, const fs::path& path) {
    write_names(labels.labels, actions, path);
}

const ManifestEntry& DatasetManifest::entry(std::string_view video_id) const {
    for (const auto& e : entries)
        if (e.video_id == video_id) return e;
    throw std::out_of_range("manifest has no video '" + std::string(video_id) + "'");
}

std::vector<std::string> read_split(const fs::path& path) { return read_lines(path, "split"); }

void write_split(const std::vector<std::string>& ids, const fs::path& path) {
    auto out = open_out(path);
    for (const auto& id : ids) out << id << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
    DatasetManifest m;
    m.root = path.parent_path();
    m.mapping = m.root / "mapping.txt";
    if (!fs::exists(m.mapping)) throw std::runtime_error("missing mapping file " + m.mapping.string());
    const auto lines = read_lines(path, "manifest");
    std::set<std::string> ids;
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : m.root / p; };
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::vector<std::string> fields;
        std::istringstream ls(lines[i]);
        std::string f;
        while (std::getline(ls, f, '\t')) fields.push_back(trim(f));
        if (fields.size() != 4)
            throw FormatError("manifest line needs 4 tab-separated fields in " + path.string(), i + 1, true);
        ManifestEntry e{fields[0], resolve(fields[1]), {}, resolve(fields[3])};
        if (!fields[2].empty() && fields[2] != "-") e.labels = resolve(fields[2]);
        if (!ids.insert(e.video_id).second)
            throw FormatError("duplicate video id '" + e.video_id + "' in manifest", i + 1, true);
        for (const fs::path* p : {&e.features, &e.transcript, &e.labels})
            if (!p->empty() && !fs::exists(*p))
                throw FormatError("manifest references missing file " + p->string(), i + 1, true);
        m.entries.push_back(std::move(e));
    }
    auto load_split = [&](const char* name, std::vector<std::string>& out) {
        const fs::path sp = m.root / (std::string(name) + ".split");
        if (!fs::exists(sp)) return;
        out = read_split(sp);
        for (const auto& id : out)
            if (!ids.count(id)) throw std::runtime_error(std::string(name) + " split names unknown video '" + id + "'");
    };
    load_split("train", m.train);
    load_split("test", m.test);
    std::set<std::string> train(m.train.begin(), m.train.end());
    for (const auto& id : m.test)
        if (train.count(id)) throw std::runtime_error("video '" + id + "' is in both train and test splits");
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    auto out = open_out(path);
    const fs::path root = path.parent_path();
    auto rel = [&](const fs::path& p) { return p.empty() ? std::string("-") : fs::relative(p, root).generic_string(); };
    for (const auto& e : manifest.entries)
        out << e.video_id << '\t' << rel(e.features) << '\t' << rel(e.labels) << '\t' << rel(e.transcript) << '\n';
}

ActionSequence collapse_runs(const ActionSequence& labels) {
    ActionSequence out;
    for (Index a : labels)
        if (out.empty() || out.back() != a) out.push_back(a);
    return out;
}

// --- Dataset ------------------------------------------------------------------------------

const Video& Dataset::video(std::string_view id) const {
    for (const auto& v : videos)
        if (v.features.video_id == id) return v;
    throw std::out_of_range("dataset has no video '" + std::string(id) + "'");
}

std::vector<std::size_t> Dataset::split(std::string_view name) const {
    if (name == "train") return train;
    if (name == "test") return test;
    if (name == "all") {
        std::vector<std::size_t> all(videos.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, test or all)");
}

Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset ds;
    ds.actions = read_mapping(manifest.mapping);
    std::map<std::string, std::size_t> position;
    for (const auto& e : manifest.entries) {
        Video v;
        v.features = read_features(e.features);
        v.features.video_id = e.video_id;
        v.transcript = read_transcript(e.transcript, ds.actions);
        v.transcript.video_id = e.video_id;
        if (!e.labels.empty()) {
            FrameLabels labels = read_labels(e.labels, ds.actions);
            labels.video_id = e.video_id;
            if (static_cast<Index>(labels.labels.size()) != v.features.length())
                throw std::runtime_error("video '" + e.video_id + "': " + std::to_string(labels.labels.size()) +
                                         " labels for " + std::to_string(v.features.length()) + " frames");
            v.labels = std::move(labels);
        }
        position[e.video_id] = ds.videos.size();
        ds.videos.push_back(std::move(v));
    }
    for (const auto& id : manifest.train) ds.train.push_back(position.at(id));
    for (const auto& id : manifest.test) ds.test.push_back(position.at(id));
    if (manifest.train.empty() && manifest.test.empty()) ds.train = ds.split("all");
    return ds;
}

Dataset load_dataset(const fs::path& manifest_path) { return load_dataset(read_manifest(manifest_path)); }

// --- synthetic ------------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (num_classes < 1) throw std::invalid_argument("synthetic: num_classes must be >= 1");
    if (feature_dim < 1) throw std::invalid_argument("synthetic: feature_dim must be >= 1");
    if (transition.rows() != num_classes || transition.cols() != num_classes)
        throw std::invalid_argument("synthetic: transition must be num_classes x num_classes");
    for (Index i = 0; i < num_classes; ++i) {
        if ((transition.row(i).array() < 0.0).any()) throw std::invalid_argument("synthetic: negative transition");
        if (std::abs(transition.row(i).sum() - 1.0) > 1e-9)
            throw std::invalid_argument("synthetic: transition row " + std::to_string(i) + " does not sum to 1");
    }
    if (initial.size() != 0 && (initial.size() != num_classes || (initial.array() < 0.0).any() || initial.sum() <= 0.0))
        throw std::invalid_argument("synthetic: bad initial distribution");
    if (means.rows() != num_classes || means.cols() != feature_dim)
        throw std::invalid_argument("synthetic: means must be num_classes x feature_dim");
    if (!(noise > 0.0)) throw std::invalid_argument("synthetic: noise sigma_f must be > 0");
    if (duration_rates.size() != num_classes || !(duration_rates.array() > 0.0).all())
        throw std::invalid_argument("synthetic: duration rates must be positive, one per class");
    if (videos < 1 || test_videos < 0 || test_videos >= videos + 1)
        throw std::invalid_argument("synthetic: bad video counts");
    if (min_transcript < 1 || max_transcript < min_transcript)
        throw std::invalid_argument("synthetic: bad transcript length range");
    if (max_frames != 0 && (max_frames < min_frames || max_frames < min_transcript))
        throw std::invalid_argument("synthetic: bad frame range");
    if (templates < 0 || !(template_edit >= 0.0 && template_edit < 1.0))
        throw std::invalid_argument("synthetic: bad template settings");
}

Matrix clustered_transitions(Index classes, Index clusters, double within) {
    if (clusters < 1 || clusters > classes) throw std::invalid_argument("clustered_transitions: bad cluster count");
    auto group = [&](Index a) { return a * clusters / classes; };
    Matrix t = Matrix::Zero(classes, classes);
    for (Index a = 0; a < classes; ++a) {
        Index same = 0, other = 0;
        for (Index b = 0; b < classes; ++b) {
            if (b == a) continue;
            (group(b) == group(a) ? same : other) += 1;
        }
        const double w_same = other == 0 ? 1.0 : (same == 0 ? 0.0 : within);
        for (Index b = 0; b < classes; ++b) {
            if (b == a) continue;
            t(a, b) = group(b) == group(a) ? w_same / static_cast<double>(same)
                                            : (1.0 - w_same) / static_cast<double>(other);
        }
        if (same == 0 && other == 0) t(a, a) = 1.0;
    }
    return t;
}

Matrix separated_means(Index classes, Index dim, double separation, double noise, Rng& rng) {
    Matrix means = Matrix::Zero(classes, dim);
    if (classes <= dim) {
        for (Index a = 0; a < classes; ++a) means(a, a) = separation * noise;
        return means;
    }
    // Random directions, rescaled so the closest pair is `separation * noise` apart.
    for (Index i = 0; i < means.size(); ++i) means.data()[i] = rng.normal();
    double closest = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < classes; ++a)
        for (Index b = a + 1; b < classes; ++b) closest = std::min(closest, (means.row(a) - means.row(b)).norm());
    return means * (separation * noise / closest);
}

namespace {

Matrix json_matrix(const nlohmann::json& j, const char* key) {
    const auto& rows = j.at(key);
    Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(m.cols()))
            throw std::invalid_argument(std::string("synthetic: ragged matrix '") + key + "'");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c].get<double>();
    }
    return m;
}

RowVector json_row(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    RowVector out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = v[i].get<double>();
    return out;
}

}  // namespace

SyntheticSpec SyntheticSpec::from_json_text(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SyntheticSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.noise = j.value("noise", s.noise);
    s.videos = j.value("videos", s.videos);
    s.test_videos = j.value("test_videos", s.test_videos);
    s.seed = j.value("seed", s.seed);
    s.templates = j.value("templates", s.templates);
    s.template_edit = j.value("template_edit", s.template_edit);
    if (j.contains("transcript_length")) {
        s.min_transcript = j["transcript_length"].at(0).get<Index>();
        s.max_transcript = j["transcript_length"].at(1).get<Index>();
    }
    if (j.contains("frames")) {
        s.min_frames = j["frames"].at(0).get<Index>();
        s.max_frames = j["frames"].at(1).get<Index>();
    }
    Rng rng(s.seed ^ 0x5eedULL);
    s.transition = j.contains("transition")
                       ? json_matrix(j, "transition")
                       : clustered_transitions(s.num_classes, j.value("clusters", Index{1}), j.value("within_cluster", 0.9));
    if (j.contains("initial")) s.initial = json_row(j, "initial");
    s.means = j.contains("means") ? json_matrix(j, "means")
                                  : separated_means(s.num_classes, s.feature_dim, j.value("separation", 4.0), s.noise, rng);
    s.duration_rates = j.contains("duration_rates")
                           ? json_row(j, "duration_rates")
                           : RowVector::Constant(s.num_classes, j.value("duration_rate", 30.0));
    s.validate();
    return s;
}

SyntheticSpec SyntheticSpec::from_json_file(const fs::path& path) {
    return from_json_text(binio::slurp(path.string()));
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
    spec.validate();
    Rng rng(spec.seed);
    const Index A = spec.num_classes;

    std::vector<std::string> names;
    for (Index a = 0; a < A; ++a) names.push_back("action" + std::to_string(a));
    ActionSet actions(names);

    RowVector initial = spec.initial.size() ? spec.initial : RowVector::Ones(A);
    DatasetManifest m;
    m.root = out_dir;
    m.mapping = out_dir / "mapping.txt";
    write_mapping(actions, m.mapping);

    auto draw_chain = [&] {
        ActionSequence t;
        const Index n = spec.min_transcript +
                        static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.max_transcript - spec.min_transcript + 1)));
        t.push_back(static_cast<Index>(rng.categorical(std::span<const double>(initial.data(), static_cast<std::size_t>(A)))));
        while (static_cast<Index>(t.size()) < n) {
            RowVector row = spec.transition.row(t.back());
            row(t.back()) = 0.0;
            if (row.sum() <= 0.0) break;
            t.push_back(static_cast<Index>(rng.categorical(std::span<const double>(row.data(), static_cast<std::size_t>(A)))));
        }
        return t;
    };
    std::vector<ActionSequence> templates;
    for (Index k = 0; k < spec.templates; ++k) templates.push_back(draw_chain());

    const int width = static_cast<int>(std::to_string(spec.videos).size());
    for (Index v = 0; v < spec.videos; ++v) {
        std::string id = std::to_string(v);
        id = "video" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id;

        ActionSequence transcript;
        std::vector<Index> durations;
        for (int attempt = 0;; ++attempt) {
            if (attempt == 10000) throw std::runtime_error("synthetic: frame bounds are unreachable");
            durations.clear();
            if (templates.empty()) {
                transcript = draw_chain();
            } else {
                const ActionSequence& base = templates[rng.below(templates.size())];
                transcript.clear();
                for (std::size_t k = 0; k < base.size(); ++k) {
                    const bool drop = rng.uniform() < spec.template_edit;
                    const bool joins_equal = !transcript.empty() && k + 1 < base.size() && transcript.back() == base[k + 1];
                    if (!drop || joins_equal) transcript.push_back(base[k]);
                }
                if (transcript.empty()) continue;
            }
            Index total = 0;
            for (Index a : transcript) {
                const auto d = std::max<Index>(1, static_cast<Index>(rng.poisson(spec.duration_rates(a))));
                durations.push_back(d);
                total += d;
            }
            if (spec.max_frames == 0 || (total >= spec.min_frames && total <= spec.max_frames)) break;
        }

        FeatureSequence seq;
        seq.video_id = id;
        seq.source_tag = "synthetic";
        FrameLabels labels{id, {}};
        for (std::size_t k = 0; k < transcript.size(); ++k)
            labels.labels.insert(labels.labels.end(), static_cast<std::size_t>(durations[k]), transcript[k]);
        seq.frames.resize(static_cast<Index>(labels.labels.size()), spec.feature_dim);
        for (Index t = 0; t < seq.frames.rows(); ++t)
            for (Index d = 0; d < spec.feature_dim; ++d)
                seq.frames(t, d) = spec.means(labels.labels[static_cast<std::size_t>(t)], d) + spec.noise * rng.normal();

        ManifestEntry e{id, out_dir / "features" / (id + ".fseq"), out_dir / "labels" / (id + ".txt"),
                        out_dir / "transcripts" / (id + ".txt")};
        write_features(seq, e.features);
        write_labels(labels, actions, e.labels);
        write_transcript(Transcript{id, transcript}, actions, e.transcript);
        (v < spec.videos - spec.test_videos ? m.train : m.test).push_back(id);
        m.entries.push_back(std::move(e));
    }
    write_manifest(m, out_dir / "manifest.tsv");
    write_split(m.train, out_dir / "train.split");
    if (!m.test.empty()) write_split(m.test, out_dir / "test.split");
    return m;
}

}  // namespace weakseg
