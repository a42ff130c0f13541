#include "weakseg/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "weakseg/cdfl.hpp"
#include "weakseg/checkpoint.hpp"
#include "weakseg/transcript_sim.hpp"
#include "weakseg/viterbi.hpp"
#include "weakseg/windowing.hpp"

namespace weakseg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("cannot format number");
    return std::string(buf, end);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
    T out{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc() || end != text.data() + text.size())
        throw std::invalid_argument("config: bad value '" + std::string(text) + "' for " + std::string(key));
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

struct Field {
    const char* key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, std::string_view)> set;
};

template <typename T>
Field number_field(const char* key, T PipelineConfig::*member) {
    return Field{key,
                 [member](const PipelineConfig& c) {
                     if constexpr (std::is_floating_point_v<T>)
                         return format_double(c.*member);
                     else
                         return std::to_string(c.*member);
                 },
                 [key, member](PipelineConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        number_field("batch", &PipelineConfig::batch),
        number_field("delta", &PipelineConfig::delta),
        number_field("dropout", &PipelineConfig::dropout),
        number_field("embed_dim", &PipelineConfig::embed_dim),
        number_field("embed_epochs", &PipelineConfig::embed_epochs),
        number_field("embed_hidden", &PipelineConfig::embed_hidden),
        number_field("embed_lr", &PipelineConfig::embed_learning_rate),
        number_field("embed_rate", &PipelineConfig::embed_rate),
        number_field("epochs", &PipelineConfig::epochs),
        number_field("ff_dim", &PipelineConfig::ff_dim),
        number_field("head_dim", &PipelineConfig::head_dim),
        number_field("heads", &PipelineConfig::heads),
        number_field("jobs", &PipelineConfig::jobs),
        number_field("layers", &PipelineConfig::layers),
        number_field("lr", &PipelineConfig::learning_rate),
        number_field("margin", &PipelineConfig::margin),
        number_field("max_length", &PipelineConfig::max_length),
        number_field("model_dim", &PipelineConfig::model_dim),
        Field{"pe", [](const PipelineConfig& c) { return to_string(c.pe); },
              [](PipelineConfig& c, std::string_view v) { c.pe = parse_pe_variant(v); }},
        Field{"pe_target", [](const PipelineConfig& c) { return to_string(c.pe_target); },
              [](PipelineConfig& c, std::string_view v) { c.pe_target = parse_pe_target(v); }},
        number_field("seed", &PipelineConfig::seed),
        number_field("sigma", &PipelineConfig::sigma),
        number_field("window", &PipelineConfig::window),
    };
    return table;
}

const Field& field(std::string_view key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
}

std::string join_ints(const std::vector<Index>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
}

std::vector<Index> split_ints(const std::string& s) {
    std::vector<Index> out;
    std::istringstream in(s);
    Index x;
    while (in >> x) out.push_back(x);
    return out;
}

ActionSequence equal_split_labels(const ActionSequence& transcript, Index frames) {
    const Index n = static_cast<Index>(transcript.size());
    ActionSequence labels;
    labels.reserve(static_cast<std::size_t>(frames));
    for (Index i = 0; i < n; ++i) {
        const Index len = frames / n + (i < frames % n ? 1 : 0);
        labels.insert(labels.end(), static_cast<std::size_t>(len), transcript[static_cast<std::size_t>(i)]);
    }
    return labels;
}

Index argmax_row(const Matrix& m, Index r) {
    Index best = 0;
    m.row(r).maxCoeff(&best);
    return best;
}

double epoch_accuracy(Index correct, Index total) {
    return total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                     : std::numeric_limits<double>::quiet_NaN();
}

struct Common {
    TrainState state;
    Rng order_rng{0};
    Rng dropout_rng{0};
    NamedParams params;
};

Common start_training(const Dataset& data, const PipelineConfig& config, TrainState::Mode mode) {
    config.validate();
    if (data.train.empty()) throw ContractError("training needs a nonempty train split");
    Common c;
    c.state.mode = mode;
    c.state.config = config;
    c.state.config.window = resolve_window(config, data);
    Rng root(config.seed);
    Rng init_rng = root.split();
    c.order_rng = root.split();
    c.dropout_rng = root.split();
    const Index dim = data.videos[data.train.front()].features.dim();
    c.state.encoder = EncoderParams::init(c.state.config.encoder(dim, data.actions.size()), init_rng);
    c.params = c.state.encoder.named();
    for (const auto& [name, t] : c.params) {
        c.state.adam_m.push_back(Matrix::Zero(t.rows(), t.cols()));
        c.state.adam_v.push_back(Matrix::Zero(t.rows(), t.cols()));
    }
    c.state.transcripts = distinct_transcripts(data, data.train);
    c.state.prior = ClassPrior(data.actions.size());
    return c;
}

}  // namespace

// --- config ------------------------------------------------------------------------------

void PipelineConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, trim(value)); }

std::string PipelineConfig::get(std::string_view key) const { return field(key).get(*this); }

std::vector<std::string> PipelineConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

void PipelineConfig::apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::uint64_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("config line without '='", n, true);
        try {
            set(trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw FormatError(e.what(), n, true);
        }
    }
}

PipelineConfig PipelineConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    PipelineConfig c;
    c.apply_text(buf.str());
    return c;
}

std::string PipelineConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
    return out;
}

void PipelineConfig::validate() const {
    if (window < 0) throw std::invalid_argument("config: window must be >= 0");
    if (!(learning_rate > 0.0) || !(embed_learning_rate > 0.0)) throw std::invalid_argument("config: lr must be > 0");
    if (delta < 0) throw std::invalid_argument("config: delta must be >= 0");
    if (epochs < 0 || embed_epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (max_length < 0) throw std::invalid_argument("config: max_length must be >= 0");
    if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
    EncoderConfig e = encoder(model_dim, 2);
    if (window == 0) e.window = 1;
    e.validate();
    embedder(1).validate();
    contrastive().validate();
}

EncoderConfig PipelineConfig::encoder(Index input_dim, Index classes) const {
    EncoderConfig e;
    e.input_dim = input_dim;
    e.classes = classes;
    e.window = window;
    e.model_dim = model_dim;
    e.heads = heads;
    e.head_dim = head_dim;
    e.ff_dim = ff_dim;
    e.layers = layers;
    e.dropout = dropout;
    e.pe = pe;
    e.pe_target = pe_target;
    return e;
}

EmbedderConfig PipelineConfig::embedder(Index input_dim) const {
    return EmbedderConfig{input_dim, embed_hidden, embed_dim, embed_rate};
}

ContrastiveConfig PipelineConfig::contrastive() const {
    return ContrastiveConfig{sigma, margin, batch, embed_epochs, embed_learning_rate};
}

// --- training ------------------------------------------------------------------------

std::vector<ActionSequence> distinct_transcripts(const Dataset& data, const std::vector<std::size_t>& videos) {
    std::vector<ActionSequence> out;
    for (std::size_t v : videos) {
        const ActionSequence& t = data.videos.at(v).transcript.actions;
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
    return out;
}

Index resolve_window(const PipelineConfig& config, const Dataset& data) {
    if (config.window > 0) return config.window;
    Index longest = 1;
    for (const auto& v : data.videos) longest = std::max(longest, v.features.length());
    return 2 * longest;
}

TrainState train_weak(const Dataset& data, const PipelineConfig& config, const TrainHooks& hooks) {
    Common c = start_training(data, config, TrainState::Mode::weak);
    TrainState& s = c.state;
    auto stage = [&](std::string_view name) {
        if (hooks.on_stage) hooks.on_stage(name, s.iteration);
    };

    double frames = 0.0, elements = 0.0;
    for (std::size_t v : data.train) {
        const Video& video = data.videos[v];
        frames += static_cast<double>(video.features.length());
        elements += static_cast<double>(video.transcript.actions.size());
        if (!video.transcript.actions.empty())
            s.prior.add_frames(equal_split_labels(video.transcript.actions, video.features.length()));
    }
    s.lengths = LengthModel(data.actions.size(), std::max(1.0, frames / std::max(elements, 1.0)), config.max_length);

    const AdamConfig adam{config.learning_rate};
    const WindowConfig wc{s.config.window};
    std::vector<std::size_t> order = data.train;
    for (Index epoch = 0; epoch < config.epochs; ++epoch) {
        c.order_rng.shuffle(std::span<std::size_t>(order));
        Index correct = 0, labelled = 0;
        double loss_sum = 0.0;
        Index updates = 0;
        for (std::size_t v : order) {
            const Video& video = data.videos[v];
            Tape tape;
            TapeScope scope(tape);
            stage("encode");
            const EncoderOutput out = encode(stack(video.features, wc), s.encoder, true, &c.dropout_rng);
            stage("decode");
            Alignment alignment;
            try {
                alignment = decode(to_likelihood(out.log_posteriors.value(), s.prior), video.transcript.actions,
                                   s.lengths);
            } catch (const InfeasibleError& e) {
                ++s.skipped;
                if (hooks.on_warning) hooks.on_warning("skipping " + video.features.video_id + ": " + e.what());
                continue;
            }
            stage("loss");
            const Tensor loss = cdfl(make_graph(out.log_posteriors, alignment, config.delta));
            stage("backward");
            tape.backward(loss);
            stage("optimizer");
            adam_step(c.params, s.adam_m, s.adam_v, s.adam_steps, adam);
            stage("update_prior");
            s.prior.update(alignment);
            stage("update_lengths");
            s.lengths.update(alignment);

            s.loss_trace.push_back(loss.item());
            loss_sum += loss.item();
            ++updates;
            ++s.iteration;
            if (video.labels) {
                const ActionSequence pred = alignment.frame_labels();
                for (std::size_t t = 0; t < pred.size(); ++t) correct += pred[t] == video.labels->labels[t];
                labelled += static_cast<Index>(pred.size());
            }
        }
        s.epoch_accuracy.push_back(epoch_accuracy(correct, labelled));
        s.epoch_loss.push_back(updates > 0 ? loss_sum / static_cast<double>(updates)
                                           : std::numeric_limits<double>::quiet_NaN());
        if (hooks.on_epoch) hooks.on_epoch(epoch, s.epoch_accuracy.back(), s.epoch_loss.back());
    }
    return std::move(c.state);
}

TrainState train_full(const Dataset& data, const PipelineConfig& config, const TrainHooks& hooks) {
    for (std::size_t v : data.train)
        if (!data.videos[v].labels)
            throw ContractError("train_full: video " + data.videos[v].features.video_id + " has no frame labels");
    Common c = start_training(data, config, TrainState::Mode::full);
    TrainState& s = c.state;
    auto stage = [&](std::string_view name) {
        if (hooks.on_stage) hooks.on_stage(name, s.iteration);
    };
    const Index classes = data.actions.size();
    const AdamConfig adam{config.learning_rate};
    const WindowConfig wc{s.config.window};
    std::vector<std::size_t> order = data.train;
    for (Index epoch = 0; epoch < config.epochs; ++epoch) {
        c.order_rng.shuffle(std::span<std::size_t>(order));
        Index correct = 0, total = 0;
        double loss_sum = 0.0;
        for (std::size_t v : order) {
            const Video& video = data.videos[v];
            const ActionSequence& labels = video.labels->labels;
            const Index T = video.features.length();
            Tape tape;
            TapeScope scope(tape);
            stage("encode");
            const EncoderOutput out = encode(stack(video.features, wc), s.encoder, true, &c.dropout_rng);
            stage("loss");
            Matrix onehot = Matrix::Zero(T, classes);
            for (Index t = 0; t < T; ++t) onehot(t, labels[static_cast<std::size_t>(t)]) = 1.0;
            const Tensor loss = scale(sum(mul(out.log_posteriors, Tensor(onehot))), -1.0 / static_cast<double>(T));
            stage("backward");
            tape.backward(loss);
            stage("optimizer");
            adam_step(c.params, s.adam_m, s.adam_v, s.adam_steps, adam);

            s.loss_trace.push_back(loss.item());
            loss_sum += loss.item();
            ++s.iteration;
            const Matrix& lp = out.log_posteriors.value();
            for (Index t = 0; t < T; ++t) correct += argmax_row(lp, t) == labels[static_cast<std::size_t>(t)];
            total += T;
        }
        s.epoch_accuracy.push_back(epoch_accuracy(correct, total));
        s.epoch_loss.push_back(order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size()));
        if (hooks.on_epoch) hooks.on_epoch(epoch, s.epoch_accuracy.back(), s.epoch_loss.back());
    }

    double frames = 0.0, segments = 0.0;
    for (std::size_t v : data.train) {
        frames += static_cast<double>(data.videos[v].features.length());
        segments += static_cast<double>(collapse_runs(data.videos[v].labels->labels).size());
    }
    s.lengths = LengthModel(classes, std::max(1.0, frames / std::max(segments, 1.0)), config.max_length);
    for (std::size_t v : data.train) {
        const ActionSequence& labels = data.videos[v].labels->labels;
        s.prior.add_frames(labels);
        Index run = 0;
        for (std::size_t t = 0; t < labels.size(); ++t) {
            ++run;
            if (t + 1 == labels.size() || labels[t + 1] != labels[t]) {
                s.lengths.add_length(labels[t], run);
                run = 0;
            }
        }
    }
    return std::move(c.state);
}

// --- inference ------------------------------------------------------------------------

Matrix likelihoods(const TrainState& state, const FeatureSequence& features) {
    if (features.dim() != state.encoder.config.input_dim)
        throw DimensionError("features of " + features.video_id + " have dimension " + std::to_string(features.dim()) +
                             ", the encoder expects " + std::to_string(state.encoder.config.input_dim));
    const EncoderOutput out = encode(stack(features, WindowConfig{state.config.window}), state.encoder, false);
    return to_likelihood(out.log_posteriors.value(), state.prior);
}

Alignment infer_align(const TrainState& state, const FeatureSequence& features, const ActionSequence& transcript) {
    return decode(likelihoods(state, features), transcript, state.lengths);
}

SegmentResult select_and_align(const TrainState& state, const Matrix& loglik, const FeatureSequence& features,
                               const Selector& selector, unsigned jobs) {
    const auto start = Clock::now();
    std::vector<ActionSequence> candidates;
    if (selector.kind == Selector::Kind::brute) {
        candidates = state.transcripts;
    } else {
        if (!selector.index || !selector.embedder) throw ContractError("embed selector needs an index and an embedder");
        if (selector.k < 1) throw std::invalid_argument("embed selector: k must be >= 1");
        candidates = selector.index->retrieve(embed_vector(features.frames, *selector.embedder), selector.k);
        std::vector<std::size_t> rank(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            auto it = std::find(state.transcripts.begin(), state.transcripts.end(), candidates[i]);
            rank[i] = it != state.transcripts.end() ? static_cast<std::size_t>(it - state.transcripts.begin())
                                                     : state.transcripts.size() + i;
        }
        std::vector<std::size_t> perm(candidates.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
        std::vector<ActionSequence> sorted;
        for (std::size_t i : perm) sorted.push_back(std::move(candidates[i]));
        candidates = std::move(sorted);
    }
    if (candidates.empty()) throw ContractError("no candidate transcripts to select from");
    Selection sel = select_transcript(loglik, candidates, state.lengths, jobs);
    SegmentResult r;
    r.transcript = candidates[sel.index];
    r.alignment = std::move(sel.alignment);
    r.candidates = candidates.size();
    r.select_seconds = seconds_since(start);
    r.seconds = r.select_seconds;
    return r;
}

SegmentResult infer_segment(const TrainState& state, const FeatureSequence& features, const Selector& selector,
                            unsigned jobs) {
    const auto start = Clock::now();
    const Matrix loglik = likelihoods(state, features);
    SegmentResult r = select_and_align(state, loglik, features, selector, jobs);
    r.seconds = seconds_since(start);
    return r;
}

// --- evaluation ------------------------------------------------------------------------

EvalMode parse_eval_mode(std::string_view s) {
    if (s == "align") return EvalMode::align;
    if (s == "segment") return EvalMode::segment;
    throw std::invalid_argument("unknown evaluation mode '" + std::string(s) + "'");
}

std::string to_string(EvalMode m) { return m == EvalMode::align ? "align" : "segment"; }

VideoResult score_video(std::string video_id, const ActionSequence& truth_labels,
                        const ActionSequence& truth_transcript, const ActionSequence& predicted_labels,
                        const ActionSequence& predicted_transcript, std::optional<Index> background) {
    if (predicted_labels.size() > truth_labels.size())
        throw DimensionError("prediction for " + video_id + " is longer than its ground truth");
    VideoResult r;
    r.video_id = std::move(video_id);
    r.frames = static_cast<Index>(truth_labels.size());
    for (std::size_t t = 0; t < truth_labels.size(); ++t) {
        const bool hit = t < predicted_labels.size() && predicted_labels[t] == truth_labels[t];
        r.correct += hit;
        if (!background || truth_labels[t] != *background) {
            ++r.non_bg_frames;
            r.non_bg_correct += hit;
        }
    }
    r.tsim = truth_transcript.empty() && predicted_transcript.empty()
                 ? 1.0
                 : transcript_similarity(predicted_transcript, truth_transcript);
    r.transcript = predicted_transcript;
    r.labels = predicted_labels;
    return r;
}

EvalReport aggregate(EvalMode mode, std::vector<VideoResult> videos) {
    EvalReport rep;
    rep.mode = mode;
    Index frames = 0, correct = 0, nb_frames = 0, nb_correct = 0;
    double tsim = 0.0;
    for (const auto& v : videos) {
        frames += v.frames;
        correct += v.correct;
        nb_frames += v.non_bg_frames;
        nb_correct += v.non_bg_correct;
        tsim += v.tsim;
        rep.seconds += v.seconds;
    }
    rep.accuracy = frames > 0 ? static_cast<double>(correct) / static_cast<double>(frames) : 0.0;
    if (nb_frames > 0) rep.accuracy_no_bg = static_cast<double>(nb_correct) / static_cast<double>(nb_frames);
    rep.mean_tsim = videos.empty() ? 0.0 : tsim / static_cast<double>(videos.size());
    rep.videos = std::move(videos);
    return rep;
}

namespace {
std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}
double ratio(Index a, Index b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }
}  // namespace

std::string EvalReport::table(bool no_bg) const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %7s %9s %9s %7s %10s\n", "video", "frames", "acc", "acc_nobg", "tsim",
                  "seconds");
    out << "mode: " << to_string(mode) << "\n" << line;
    for (const auto& v : videos) {
        const std::string nb = v.non_bg_frames > 0 ? fmt6(ratio(v.non_bg_correct, v.non_bg_frames)) : "-";
        std::snprintf(line, sizeof line, "%-16s %7lld %9.4f %9s %7.3f %10.4f%s\n", v.video_id.c_str(),
                      static_cast<long long>(v.frames), ratio(v.correct, v.frames), nb.c_str(), v.tsim, v.seconds,
                      v.infeasible ? "  (infeasible)" : "");
        out << line;
    }
    std::snprintf(line, sizeof line, "accuracy: %.4f\n", accuracy);
    out << line;
    if (no_bg) {
        if (accuracy_no_bg)
            std::snprintf(line, sizeof line, "accuracy_no_bg: %.4f\n", *accuracy_no_bg);
        else
            std::snprintf(line, sizeof line, "accuracy_no_bg: absent\n");
        out << line;
    }
    std::snprintf(line, sizeof line, "mean_tsim: %.4f\nseconds: %.4f\n", mean_tsim, seconds);
    out << line;
    return out.str();
}

std::string EvalReport::delimited(char sep) const {
    std::ostringstream out;
    const std::string d(1, sep);
    out << "video" << d << "mode" << d << "frames" << d << "accuracy" << d << "accuracy_no_bg" << d << "tsim" << d
        << "seconds" << d << "candidates\n";
    Index frames = 0;
    std::size_t candidates = 0;
    for (const auto& v : videos) {
        out << v.video_id << d << to_string(mode) << d << v.frames << d << fmt6(ratio(v.correct, v.frames)) << d
            << (v.non_bg_frames > 0 ? fmt6(ratio(v.non_bg_correct, v.non_bg_frames)) : "") << d << fmt6(v.tsim) << d
            << fmt6(v.seconds) << d << v.candidates << "\n";
        frames += v.frames;
        candidates += v.candidates;
    }
    out << "ALL" << d << to_string(mode) << d << frames << d << fmt6(accuracy) << d
        << (accuracy_no_bg ? fmt6(*accuracy_no_bg) : "") << d << fmt6(mean_tsim) << d << fmt6(seconds) << d
        << candidates << "\n";
    return out.str();
}

EvalReport evaluate(const TrainState& state, const Dataset& data, const std::vector<std::size_t>& videos,
                    EvalMode mode, const Selector& selector, unsigned jobs) {
    for (std::size_t v : videos) {
        const Video& video = data.videos.at(v);
        if (!video.labels) throw ContractError("evaluate: video " + video.features.video_id + " has no frame labels");
        if (static_cast<Index>(video.labels->labels.size()) != video.features.length())
            throw DimensionError("evaluate: labels and features of " + video.features.video_id + " differ in length");
    }
    std::vector<VideoResult> rows(videos.size());
    auto run = [&](std::size_t i) {
        const Video& video = data.videos[videos[i]];
        const auto start = Clock::now();
        ActionSequence transcript, labels;
        std::size_t candidates = 1;
        bool infeasible = false;
        try {
            if (mode == EvalMode::align) {
                transcript = video.transcript.actions;
                labels = infer_align(state, video.features, transcript).frame_labels();
            } else {
                SegmentResult r = infer_segment(state, video.features, selector, 1);
                transcript = std::move(r.transcript);
                labels = r.alignment.frame_labels();
                candidates = r.candidates;
            }
        } catch (const InfeasibleError&) {
            infeasible = true;
            labels.clear();
        }
        VideoResult row = score_video(video.features.video_id, video.labels->labels, video.transcript.actions, labels,
                                      transcript, data.actions.background());
        row.seconds = seconds_since(start);
        row.candidates = candidates;
        row.infeasible = infeasible;
        rows[i] = std::move(row);
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(videos.size())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < videos.size(); ++i) run(i);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < videos.size(); i += workers) run(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return aggregate(mode, std::move(rows));
}

// --- persistence ----------------------------------------------------------------------

namespace {

void put_params(Archive& a, const std::string& prefix, const NamedParams& params) {
    for (const auto& [name, t] : params) a.put(prefix + name, t);
}

void get_params(const Archive& a, const std::string& prefix, const NamedParams& params) {
    for (const auto& [name, t] : params) {
        const Archive::Array& arr = a.get(prefix + name);
        if (arr.shape != t.shape())
            throw FormatError("checkpoint array " + prefix + name + " has shape " + to_string(arr.shape) + ", expected " +
                                  to_string(t.shape()),
                              0);
        Tensor handle = t;
        handle.mutable_value() = arr.value;
    }
}

}  // namespace

void TrainState::save(const fs::path& path) const {
    Archive a;
    const NamedParams params = encoder.named();
    put_params(a, "encoder.", params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        a.put_shaped("adam.m." + params[i].first, params[i].second.shape(), adam_m.at(i));
        a.put_shaped("adam.v." + params[i].first, params[i].second.shape(), adam_v.at(i));
    }
    a.put("prior.counts", Matrix(prior.counts()));
    a.put("lengths.sums", Matrix(lengths.sums()));
    a.put("lengths.counts", Matrix(lengths.counts()));
    a.put_vector("lengths.initial_rate", {lengths.initial_rate()});
    a.put_vector("prior.floor", {prior.floor()});
    a.put_vector("curve.accuracy", epoch_accuracy);
    a.put_vector("curve.loss", epoch_loss);
    a.put_vector("trace.loss", loss_trace);
    for (const auto& key : config.keys()) a.set_meta("config." + key, config.get(key));
    a.set_meta("mode", mode == Mode::weak ? "weak" : "full");
    a.set_meta("input_dim", std::to_string(encoder.config.input_dim));
    a.set_meta("classes", std::to_string(encoder.config.classes));
    a.set_meta("lengths.max_length", std::to_string(lengths.max_length()));
    a.set_meta("adam.steps", std::to_string(adam_steps));
    a.set_meta("iteration", std::to_string(iteration));
    a.set_meta("skipped", std::to_string(skipped));
    a.set_meta("transcripts.count", std::to_string(transcripts.size()));
    for (std::size_t i = 0; i < transcripts.size(); ++i)
        a.set_meta("transcripts." + std::to_string(i), join_ints(transcripts[i]));
    a.save(path);
}

TrainState TrainState::load(const fs::path& path) {
    const Archive a = Archive::load(path);
    try {
        TrainState s;
        for (const auto& [key, value] : a.metadata())
            if (key.rfind("config.", 0) == 0) s.config.set(key.substr(7), value);
        const std::string& mode = a.meta("mode");
        if (mode != "weak" && mode != "full") throw std::invalid_argument("unknown training mode '" + mode + "'");
        s.mode = mode == "weak" ? Mode::weak : Mode::full;
        const Index input_dim = std::stoll(a.meta("input_dim"));
        const Index classes = std::stoll(a.meta("classes"));
        Rng unused(0);
        s.encoder = EncoderParams::init(s.config.encoder(input_dim, classes), unused);
        const NamedParams params = s.encoder.named();
        get_params(a, "encoder.", params);
        for (const auto& [name, t] : params) {
            s.adam_m.push_back(a.get("adam.m." + name).value);
            s.adam_v.push_back(a.get("adam.v." + name).value);
        }
        s.prior = ClassPrior(classes, a.get_vector("prior.floor").at(0));
        s.prior.set_counts(a.get("prior.counts").value);
        s.lengths = LengthModel(classes, a.get_vector("lengths.initial_rate").at(0), std::stoll(a.meta("lengths.max_length")));
        s.lengths.set_state(a.get("lengths.sums").value, a.get("lengths.counts").value);
        s.epoch_accuracy = a.get_vector("curve.accuracy");
        s.epoch_loss = a.get_vector("curve.loss");
        s.loss_trace = a.get_vector("trace.loss");
        s.adam_steps = std::stoll(a.meta("adam.steps"));
        s.iteration = std::stoll(a.meta("iteration"));
        s.skipped = std::stoll(a.meta("skipped"));
        const std::size_t count = std::stoull(a.meta("transcripts.count"));
        for (std::size_t i = 0; i < count; ++i) s.transcripts.push_back(split_ints(a.meta("transcripts." + std::to_string(i))));
        return s;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad checkpoint ") + path.string() + ": " + e.what(), 0);
    }
}

void save_embedder(const EmbedderParams& params, const fs::path& path) {
    Archive a;
    put_params(a, "embedder.", params.named());
    const EmbedderConfig& c = params.config;
    a.set_meta("input_dim", std::to_string(c.input_dim));
    a.set_meta("hidden", std::to_string(c.hidden));
    a.set_meta("output_dim", std::to_string(c.output_dim));
    a.set_meta("rate", std::to_string(c.rate));
    a.save(path);
}

EmbedderParams load_embedder(const fs::path& path) {
    const Archive a = Archive::load(path);
    try {
        EmbedderConfig c{std::stoll(a.meta("input_dim")), std::stoll(a.meta("hidden")), std::stoll(a.meta("output_dim")),
                         std::stoll(a.meta("rate"))};
        Rng unused(0);
        EmbedderParams p = EmbedderParams::init(c, unused);
        get_params(a, "embedder.", p.named());
        return p;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad embedder checkpoint ") + path.string() + ": " + e.what(), 0);
    }
}

std::string format_transcript(const ActionSequence& t, const ActionSet& actions) {
    std::string out;
    for (std::size_t i = 0; i < t.size(); ++i) out += (i ? " " : "") + actions.name(t[i]);
    return out;
}

}  // namespace weakseg
