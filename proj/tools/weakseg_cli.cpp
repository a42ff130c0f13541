// weakseg command-line entry point.

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "weakseg/pipeline.hpp"
#include "weakseg/windowing.hpp"

using namespace weakseg;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// shortest text that reads back to the same double
std::string exact(double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

void print_config(const PipelineConfig& c) {
    std::cout << "# config\n";
    std::istringstream lines(c.to_text());
    std::string line;
    while (std::getline(lines, line)) std::cout << "#   " << line << "\n";
    std::cout << "# seed " << c.seed << "\n";
}

/// Flags that override config keys; values are applied only when given.
class Overrides {
public:
    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto& slot = values_[key];
        opts_.emplace_back(app->add_option(flag, slot, help), key);
    }

    bool given(const std::string& key) const {
        for (const auto& [opt, k] : opts_)
            if (k == key && opt->count() > 0) return true;
        return false;
    }

    PipelineConfig resolve(const std::string& config_path) const {
        PipelineConfig c;
        if (!config_path.empty()) c = PipelineConfig::from_file(config_path);
        for (const auto& [opt, key] : opts_) {
            if (opt->count() == 0) continue;
            try {
                c.set(key, values_.at(key));
            } catch (const std::invalid_argument& e) {
                throw UsageError(opt->get_name() + ": " + e.what());
            }
        }
        if (c.pe == PeVariant::none && given("pe_target"))
            throw UsageError("--pe-target has no effect with --pe none");
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return c;
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::pair<CLI::Option*, std::string>> opts_;
};

void add_encoder_flags(CLI::App* app, Overrides& o) {
    o.add(app, "--window-size", "window", "frames per window, 0 for one window over the whole video (default 32)");
    o.add(app, "--heads", "heads", "attention heads (default 4)");
    o.add(app, "--head-dim", "head_dim", "width per head (default 64)");
    o.add(app, "--model-dim", "model_dim", "encoder width (default 64)");
    o.add(app, "--ff-dim", "ff_dim", "feed-forward width (default 256)");
    o.add(app, "--layers", "layers", "encoder layers (default 1)");
    o.add(app, "--dropout", "dropout", "dropout rate (default 0.5)");
    o.add(app, "--pe", "pe", "sinusoidal|learned|none");
    o.add(app, "--pe-target", "pe_target", "window|video|both");
    o.add(app, "--lr", "lr", "learning rate (default 0.001)");
    o.add(app, "--delta", "delta", "boundary slack of the segmentation graph (default 10)");
    o.add(app, "--epochs", "epochs", "training epochs (default 15)");
    o.add(app, "--max-length", "max_length", "longest segment, 0 for the video length");
    o.add(app, "--seed", "seed", "random seed");
    o.add(app, "--jobs", "jobs", "worker threads for inference");
}

std::vector<std::size_t> pick_videos(const Dataset& d, const std::string& video, const std::string& split) {
    if (!video.empty()) {
        for (std::size_t i = 0; i < d.videos.size(); ++i)
            if (d.videos[i].features.video_id == video) return {i};
        throw std::runtime_error("no video '" + video + "' in the manifest");
    }
    try {
        return d.split(split);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

struct SelectorArgs {
    std::string kind = "brute";
    Index k = 1;
    std::string index_path, embedder_path;
    EmbeddingIndex index;
    EmbedderParams embedder;

    void add(CLI::App* app) {
        app->add_option("--selector", kind, "brute|embed")->check(CLI::IsMember({"brute", "embed"}));
        app->add_option("--k", k, "neighbours retrieved by the embed selector")->check(CLI::PositiveNumber);
        app->add_option("--index", index_path, "embedding index file");
        app->add_option("--embedder", embedder_path, "embedder checkpoint");
    }

    Selector load() {
        if (kind == "brute") {
            if (!index_path.empty() || !embedder_path.empty())
                throw UsageError("--index/--embedder need --selector embed");
            return Selector{};
        }
        if (index_path.empty() || embedder_path.empty()) throw UsageError("--selector embed needs --index and --embedder");
        index = EmbeddingIndex::load(index_path);
        embedder = load_embedder(embedder_path);
        return Selector{Selector::Kind::embed, k, &index, &embedder};
    }
};

void write_prediction(const fs::path& dir, const std::string& id, const ActionSequence& labels,
                      const ActionSequence& transcript, const ActionSet& actions) {
    write_labels(FrameLabels{id, labels}, actions, dir / (id + ".txt"));
    write_transcript(Transcript{id, transcript}, actions, dir / (id + ".transcript.txt"));
}

void print_alignment(const std::string& id, const Alignment& a, const ActionSet& actions) {
    std::cout << id << "\t";
    for (std::size_t n = 0; n < a.lengths.size(); ++n)
        std::cout << (n ? " " : "") << actions.name(a.transcript[n]) << ":" << a.lengths[n];
    std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transcript-supervised action segmentation"};
    app.require_subcommand(1);

    // synth
    std::string spec_path, out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "JSON generator spec")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", out, "output directory")->required();

    // training
    std::string manifest, config_path;
    Overrides seg_o, full_o, emb_o;
    auto* train_seg = app.add_subcommand("train-seg", "weakly supervised training from transcripts");
    auto* train_full_cmd = app.add_subcommand("train-full", "frame-level training from labels");
    for (auto [cmd, o] : {std::pair{train_seg, &seg_o}, std::pair{train_full_cmd, &full_o}}) {
        cmd->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
        cmd->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
        cmd->add_option("--out", out, "checkpoint to write")->required();
        add_encoder_flags(cmd, *o);
    }
    std::string curve_out;
    train_seg->add_option("--curve", curve_out, "also write the epoch accuracy CSV here");

    auto* train_embed = app.add_subcommand("train-embed", "contrastive video/transcript embedder");
    train_embed->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    train_embed->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    train_embed->add_option("--out", out, "embedder checkpoint to write")->required();
    emb_o.add(train_embed, "--sigma", "sigma", "similarity threshold (default 0.5)");
    emb_o.add(train_embed, "--margin", "margin", "hinge margin (default 0.5)");
    emb_o.add(train_embed, "--rate", "embed_rate", "downsampling stride (default 16)");
    emb_o.add(train_embed, "--batch", "batch", "pairs per update (default 64)");
    emb_o.add(train_embed, "--hidden", "embed_hidden", "GRU width per direction (default 256)");
    emb_o.add(train_embed, "--dim", "embed_dim", "embedding width (default 64)");
    emb_o.add(train_embed, "--epochs", "embed_epochs", "epochs (default 30)");
    emb_o.add(train_embed, "--lr", "embed_lr", "learning rate (default 0.001)");
    emb_o.add(train_embed, "--seed", "seed", "random seed");

    std::string embedder_path, split = "train", video;
    unsigned jobs = 1;
    auto* build_index_cmd = app.add_subcommand("build-index", "embed videos into a retrieval index");
    build_index_cmd->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    build_index_cmd->add_option("--embedder", embedder_path, "embedder checkpoint")->required()->check(CLI::ExistingFile);
    build_index_cmd->add_option("--split", split, "train|test|all (default train)");
    build_index_cmd->add_option("--out", out, "index file to write")->required();
    build_index_cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

    // inference
    std::string checkpoint, out_dir, infer_split = "test";
    auto* align = app.add_subcommand("align", "align the given transcripts");
    auto* segment = app.add_subcommand("segment", "select a transcript and align it");
    SelectorArgs seg_sel, eval_sel;
    for (auto* cmd : {align, segment}) {
        cmd->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
        cmd->add_option("--checkpoint", checkpoint, "trained state")->required()->check(CLI::ExistingFile);
        cmd->add_option("--video", video, "one video id");
        cmd->add_option("--split", infer_split, "train|test|all when no --video is given (default test)");
        cmd->add_option("--out-dir", out_dir, "write predicted labels and transcripts here");
        cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    }
    seg_sel.add(segment);

    std::string mode = "align", pred_dir, csv_out, eval_split = "test";
    bool no_bg = false;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "frame accuracy and transcript similarity");
    evaluate_cmd->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    auto* ckpt_opt = evaluate_cmd->add_option("--checkpoint", checkpoint, "trained state")->check(CLI::ExistingFile);
    auto* pred_opt = evaluate_cmd->add_option("--pred-dir", pred_dir, "score label files instead of running a model")
                         ->check(CLI::ExistingDirectory);
    ckpt_opt->excludes(pred_opt);
    evaluate_cmd->add_option("--mode", mode, "align|segment")->check(CLI::IsMember({"align", "segment"}));
    evaluate_cmd->add_flag("--no-bg", no_bg, "also report accuracy without background frames");
    evaluate_cmd->add_option("--split", eval_split, "train|test|all (default test)");
    evaluate_cmd->add_option("--csv", csv_out, "write the per-video CSV here");
    evaluate_cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    eval_sel.add(evaluate_cmd);

    auto* dump_attention = app.add_subcommand("dump-attention", "center-query attention of one video as CSV");
    dump_attention->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    dump_attention->add_option("--checkpoint", checkpoint, "trained state")->required()->check(CLI::ExistingFile);
    dump_attention->add_option("--video", video, "video id")->required();
    dump_attention->add_option("--out", out, "CSV to write")->required();

    auto* dump_curve = app.add_subcommand("dump-traincurve", "per-epoch training accuracy as CSV");
    dump_curve->add_option("--checkpoint", checkpoint, "trained state")->required()->check(CLI::ExistingFile);
    dump_curve->add_option("--out", out, "CSV to write")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    auto curve_csv = [](const TrainState& s) {
        std::string csv = "epoch,accuracy,loss\n";
        for (std::size_t e = 0; e < s.epoch_accuracy.size(); ++e)
            csv += std::to_string(e + 1) + "," + fmt6(s.epoch_accuracy[e]) + "," + fmt6(s.epoch_loss[e]) + "\n";
        return csv;
    };

    try {
        if (*synth) {
            const SyntheticSpec spec = SyntheticSpec::from_json_file(spec_path);
            std::cout << "# seed " << spec.seed << "\n";
            const DatasetManifest m = generate_synthetic(spec, out);
            std::cout << "wrote " << m.entries.size() << " videos to " << out << "\n";
        } else if (*train_seg || *train_full_cmd) {
            const bool weak = train_seg->parsed();
            const PipelineConfig c = (weak ? seg_o : full_o).resolve(config_path);
            print_config(c);
            const Dataset d = load_dataset(fs::path(manifest));
            TrainHooks hooks;
            hooks.on_epoch = [](Index e, double acc, double loss) {
                std::cout << "epoch " << e + 1 << " train_accuracy " << fmt6(acc) << " loss " << fmt6(loss) << std::endl;
            };
            hooks.on_warning = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
            const TrainState s = weak ? train_weak(d, c, hooks) : train_full(d, c, hooks);
            if (s.skipped > 0) std::cerr << "warning: skipped " << s.skipped << " infeasible decodes\n";
            s.save(out);
            if (!curve_out.empty()) write_text(curve_out, curve_csv(s));
            std::cout << "wrote " << out << "\n";
        } else if (*train_embed) {
            const PipelineConfig c = emb_o.resolve(config_path);
            print_config(c);
            const Dataset d = load_dataset(fs::path(manifest));
            Rng rng(c.seed);
            const Index dim = d.videos.at(d.train.at(0)).features.dim();
            const EmbedderTraining t = train_embedder(d, d.train, c.embedder(dim), c.contrastive(), rng);
            if (!t.batch_losses.empty()) std::cout << "final batch loss " << fmt6(t.batch_losses.back()) << "\n";
            save_embedder(t.params, out);
            std::cout << "wrote " << out << "\n";
        } else if (*build_index_cmd) {
            const Dataset d = load_dataset(fs::path(manifest));
            const EmbedderParams p = load_embedder(embedder_path);
            const EmbeddingIndex index = build_index(d, pick_videos(d, "", split), p, jobs);
            index.save(out);
            std::cout << "indexed " << index.size() << " videos into " << out << "\n";
        } else if (*align || *segment) {
            const TrainState s = TrainState::load(checkpoint);
            print_config(s.config);
            const Dataset d = load_dataset(fs::path(manifest));
            const Selector sel = *segment ? seg_sel.load() : Selector{};
            for (std::size_t v : pick_videos(d, video, infer_split)) {
                const Video& vid = d.videos[v];
                const std::string& id = vid.features.video_id;
                if (*align) {
                    const Alignment a = infer_align(s, vid.features, vid.transcript.actions);
                    print_alignment(id, a, d.actions);
                    if (!out_dir.empty()) write_prediction(out_dir, id, a.frame_labels(), a.transcript, d.actions);
                } else {
                    const SegmentResult r = infer_segment(s, vid.features, sel, jobs);
                    std::cout << id << "\t" << format_transcript(r.transcript, d.actions) << "\n";
                    if (!out_dir.empty())
                        write_prediction(out_dir, id, r.alignment.frame_labels(), r.transcript, d.actions);
                }
            }
        } else if (*evaluate_cmd) {
            const Dataset d = load_dataset(fs::path(manifest));
            const EvalMode m = parse_eval_mode(mode);
            const std::vector<std::size_t> videos = pick_videos(d, "", eval_split);
            EvalReport report;
            if (!pred_dir.empty()) {
                std::vector<VideoResult> rows;
                for (std::size_t v : videos) {
                    const Video& vid = d.videos[v];
                    if (!vid.labels) throw std::runtime_error("video " + vid.features.video_id + " has no labels");
                    const FrameLabels pred = read_labels(fs::path(pred_dir) / (vid.features.video_id + ".txt"), d.actions);
                    if (pred.labels.size() != vid.labels->labels.size())
                        throw std::runtime_error("prediction for " + vid.features.video_id + " has " +
                                                 std::to_string(pred.labels.size()) + " frames, expected " +
                                                 std::to_string(vid.labels->labels.size()));
                    rows.push_back(score_video(vid.features.video_id, vid.labels->labels, vid.transcript.actions,
                                               pred.labels, collapse_runs(pred.labels), d.actions.background()));
                }
                report = aggregate(m, std::move(rows));
            } else {
                if (checkpoint.empty()) throw UsageError("evaluate needs --checkpoint or --pred-dir");
                const TrainState s = TrainState::load(checkpoint);
                print_config(s.config);
                const Selector sel = m == EvalMode::segment ? eval_sel.load() : Selector{};
                report = evaluate(s, d, videos, m, sel, jobs);
            }
            std::cout << report.table(no_bg);
            if (!csv_out.empty()) write_text(csv_out, report.delimited(','));
        } else if (*dump_attention) {
            const TrainState s = TrainState::load(checkpoint);
            print_config(s.config);
            const Dataset d = load_dataset(fs::path(manifest));
            const Video& vid = d.video(video);
            const Matrix a = attention_map(stack(vid.features, WindowConfig{s.config.window}), s.encoder);
            std::string csv = "frame";
            for (Index j = 0; j < a.cols(); ++j) csv += ",s" + std::to_string(j);
            csv += "\n";
            for (Index t = 0; t < a.rows(); ++t) {
                csv += std::to_string(t);
                for (Index j = 0; j < a.cols(); ++j) csv += "," + exact(a(t, j));
                csv += "\n";
            }
            write_text(out, csv);
            std::cout << "wrote " << a.rows() << "x" << a.cols() << " attention to " << out << "\n";
        } else if (*dump_curve) {
            const TrainState s = TrainState::load(checkpoint);
            print_config(s.config);
            write_text(out, curve_csv(s));
            std::cout << "wrote " << s.epoch_accuracy.size() << " epochs to " << out << "\n";
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
