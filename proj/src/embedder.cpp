#include "weakseg/embedder.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "weakseg/transcript_sim.hpp"

namespace weakseg {

// --- recurrent scan ------------------------------------------------------------

Tensor gru_scan(const Tensor& input_gates, const Tensor& w_h, const Tensor& b_h, bool reverse) {
    const Index H = w_h.rows();
    const Index T = input_gates.rows();
    if (w_h.cols() != 3 * H || input_gates.cols() != 3 * H || b_h.numel() != 3 * H)
        throw DimensionError("gru_scan: gate widths must be 3 x hidden");
    const Matrix& X = input_gates.value();
    const Matrix& W = w_h.value();
    Eigen::Map<const RowVector> b(b_h.value().data(), 3 * H);

    const bool record = Tape::active() != nullptr &&
                        (input_gates.requires_grad() || w_h.requires_grad() || b_h.requires_grad());
    Matrix hs(T, H), rs, zs, ns, hn;
    if (record) {
        rs.resize(T, H);
        zs.resize(T, H);
        ns.resize(T, H);
        hn.resize(T, H);
    }
    RowVector h = RowVector::Zero(H), hg(3 * H), r(H), z(H), n(H);
    for (Index k = 0; k < T; ++k) {
        const Index t = reverse ? T - 1 - k : k;
        hg.noalias() = h * W;
        hg += b;
        r = (1.0 + (-(X.row(t).head(H) + hg.head(H)).array()).exp()).inverse().matrix();
        z = (1.0 + (-(X.row(t).segment(H, H) + hg.segment(H, H)).array()).exp()).inverse().matrix();
        // tanh through the vectorized exp
        n = (1.0 - 2.0 / ((2.0 * (X.row(t).tail(H).array() + r.array() * hg.tail(H).array())).exp() + 1.0)).matrix();
        h = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
        hs.row(t) = h;
        if (record) {
            rs.row(t) = r;
            zs.row(t) = z;
            ns.row(t) = n;
            hn.row(t) = hg.tail(H);
        }
    }
    Matrix out = hs;
    return make_result(Shape{T, H}, std::move(out), {input_gates, w_h, b_h},
                       [input_gates, w_h, b_h, reverse, H, T, hs = std::move(hs), rs = std::move(rs),
                        zs = std::move(zs), ns = std::move(ns), hn = std::move(hn)](detail::Node& self) {
                           const Matrix& W = w_h.value();
                           Matrix dx(T, 3 * H);
                           Matrix dw = Matrix::Zero(H, 3 * H);
                           RowVector db = RowVector::Zero(3 * H);
                           RowVector carry = RowVector::Zero(H);
                           const RowVector zero = RowVector::Zero(H);
                           for (Index k = T - 1; k >= 0; --k) {
                               const Index t = reverse ? T - 1 - k : k;
                               const Index prev_t = reverse ? t + 1 : t - 1;
                               const RowVector h_prev = k == 0 ? zero : RowVector(hs.row(prev_t));
                               const RowVector dh = self.grad.row(t) + carry;
                               const auto r = rs.row(t).array(), z = zs.row(t).array(), n = ns.row(t).array();
                               const RowVector dn_pre = (dh.array() * (1.0 - z) * (1.0 - n.square())).matrix();
                               const RowVector dz_pre =
                                   (dh.array() * (h_prev.array() - n) * z * (1.0 - z)).matrix();
                               const RowVector dr_pre = (dn_pre.array() * hn.row(t).array() * r * (1.0 - r)).matrix();
                               RowVector dhg(3 * H);
                               dhg << dr_pre, dz_pre, (dn_pre.array() * r).matrix();
                               dx.row(t) << dr_pre, dz_pre, dn_pre;
                               dw.noalias() += h_prev.transpose() * dhg;
                               db += dhg;
                               carry = (dh.array() * z).matrix() + dhg * W.transpose();
                           }
                           if (input_gates.requires_grad()) input_gates.node()->accumulate(dx);
                           if (w_h.requires_grad()) w_h.node()->accumulate(dw);
                           if (b_h.requires_grad())
                               b_h.node()->accumulate_expr(Eigen::Map<const Matrix>(db.data(), b_h.rows(), b_h.cols()));
                       });
}

// --- parameters --------------------------------------------------------------------

void EmbedderConfig::validate() const {
    if (input_dim < 1 || hidden < 1 || output_dim < 1) throw std::invalid_argument("embedder: dimensions must be >= 1");
    if (rate < 1) throw std::invalid_argument("embedder: downsampling rate must be >= 1");
}

namespace {

GruParams init_gru(Index in, Index hidden, Rng& rng) {
    return GruParams{xavier_uniform(in, 3 * hidden, rng), Tensor(Matrix::Zero(1, 3 * hidden), true),
                     xavier_uniform(hidden, 3 * hidden, rng), Tensor(Matrix::Zero(1, 3 * hidden), true)};
}

}  // namespace

EmbedderParams EmbedderParams::init(const EmbedderConfig& config, Rng& rng) {
    config.validate();
    EmbedderParams p;
    p.config = config;
    p.forward = init_gru(config.input_dim, config.hidden, rng);
    p.backward = init_gru(config.input_dim, config.hidden, rng);
    p.proj_w = xavier_uniform(2 * config.hidden, config.output_dim, rng);
    p.proj_b = Tensor(Matrix::Zero(1, config.output_dim), true);
    return p;
}

NamedParams EmbedderParams::named() const {
    return {{"gru.fwd.w_x", forward.w_x}, {"gru.fwd.b_x", forward.b_x}, {"gru.fwd.w_h", forward.w_h},
            {"gru.fwd.b_h", forward.b_h}, {"gru.bwd.w_x", backward.w_x}, {"gru.bwd.b_x", backward.b_x},
            {"gru.bwd.w_h", backward.w_h}, {"gru.bwd.b_h", backward.b_h}, {"proj.weight", proj_w},
            {"proj.bias", proj_b}};
}

std::vector<Index> downsample_indices(Index frames, Index rate, Index offset) {
    if (rate < 1 || offset < 0) throw std::invalid_argument("downsample: bad rate or offset");
    std::vector<Index> idx;
    for (Index t = offset; t < frames; t += rate) idx.push_back(t);
    if (idx.empty()) idx.push_back(0);
    return idx;
}

Tensor embed(const Matrix& frames, const EmbedderParams& p, Index offset) {
    if (frames.rows() < 1) throw std::invalid_argument("embed: empty sequence");
    if (frames.cols() != p.config.input_dim)
        throw DimensionError("embed: feature dim " + std::to_string(frames.cols()) + " but embedder expects " +
                             std::to_string(p.config.input_dim));
    Tensor x(frames);
    Tensor hf = gru_scan(linear(x, p.forward.w_x, p.forward.b_x), p.forward.w_h, p.forward.b_h, false);
    Tensor hb = gru_scan(linear(x, p.backward.w_x, p.backward.b_x), p.backward.w_h, p.backward.b_h, true);
    Tensor kept = gather_rows(concat_cols({hf, hb}), downsample_indices(frames.rows(), p.config.rate, offset));
    return mean(linear(kept, p.proj_w, p.proj_b), 0);
}

RowVector embed_vector(const Matrix& frames, const EmbedderParams& params) {
    return embed(frames, params, 0).value().row(0);
}

// --- losses ------------------------------------------------------------------------

void ContrastiveConfig::validate() const {
    if (!(sigma > 0.0 && sigma <= 1.0)) throw std::invalid_argument("contrastive: sigma must be in (0, 1]");
    if (!(margin > 0.0 && margin <= 2.0)) throw std::invalid_argument("contrastive: margin must be in (0, 2]");
    if (batch < 1 || epochs < 0) throw std::invalid_argument("contrastive: bad batch size or epoch count");
}

Tensor contrastive_pair_loss(const Tensor& u, const Tensor& v, double similarity, const ContrastiveConfig& cfg) {
    Tensor d = cosine_distance(u, v);
    if (similarity >= cfg.sigma) return d;
    return relu(add_scalar(scale(d, -1.0), cfg.margin));
}

Tensor batch_loss(const std::vector<EmbeddedPair>& pairs, const ContrastiveConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("batch_loss: empty batch");
    std::vector<Tensor> losses;
    for (const auto& p : pairs) losses.push_back(contrastive_pair_loss(p.u, p.v, p.similarity, cfg));
    return mean(concat_rows(losses));
}

EmbedderTraining train_embedder(const Dataset& data, const std::vector<std::size_t>& videos,
                                const EmbedderConfig& config, const ContrastiveConfig& cfg, Rng& rng) {
    cfg.validate();
    if (videos.size() < 2) throw std::invalid_argument("train_embedder: needs at least two videos");
    EmbedderTraining out{EmbedderParams::init(config, rng), {}};
    Adam adam(out.params.named(), AdamConfig{cfg.learning_rate});
    std::vector<std::size_t> order = videos;
    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        const std::size_t pairs = order.size() / 2;
        for (std::size_t start = 0; start < pairs; start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(pairs, start + static_cast<std::size_t>(cfg.batch));
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                std::vector<EmbeddedPair> batch;
                for (std::size_t p = start; p < end; ++p) {
                    const Video& a = data.videos[order[2 * p]];
                    const Video& b = data.videos[order[2 * p + 1]];
                    const Index rate = config.rate;
                    Tensor u = embed(a.features.frames, out.params, static_cast<Index>(rng.below(static_cast<std::uint64_t>(rate))));
                    Tensor v = embed(b.features.frames, out.params, static_cast<Index>(rng.below(static_cast<std::uint64_t>(rate))));
                    batch.push_back({u, v, transcript_similarity(a.transcript.actions, b.transcript.actions)});
                }
                loss = batch_loss(batch, cfg);
            }
            out.batch_losses.push_back(loss.item());
            if (loss.requires_grad()) {
                tape.backward(loss);
                adam.step();
            }
        }
    }
    return out;
}

// --- index -------------------------------------------------------------------------

double cosine_distance(const RowVector& u, const RowVector& v) {
    const double nu = u.norm(), nv = v.norm();
    if (nu == 0.0 || nv == 0.0) throw ContractError("cosine_distance: zero vector");
    return 1.0 - u.dot(v) / (nu * nv);
}

void EmbeddingIndex::add(std::string video_id, RowVector embedding, ActionSequence transcript) {
    if (embedding.size() == 0 || embedding.norm() == 0.0 || !embedding.allFinite())
        throw std::invalid_argument("EmbeddingIndex: embeddings must be finite and nonzero");
    if (!entries_.empty() && embedding.size() != dim()) throw DimensionError("EmbeddingIndex: dimension mismatch");
    for (const auto& e : entries_)
        if (e.video_id == video_id) throw std::invalid_argument("EmbeddingIndex: duplicate video id '" + video_id + "'");
    entries_.push_back({std::move(video_id), std::move(embedding), std::move(transcript)});
}

std::vector<std::size_t> EmbeddingIndex::ranked(const RowVector& query) const {
    std::vector<double> dist(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) dist[i] = cosine_distance(query, entries_[i].embedding);
    std::vector<std::size_t> order(entries_.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return entries_[a].video_id < entries_[b].video_id;
    });
    return order;
}

std::vector<ActionSequence> EmbeddingIndex::retrieve(const RowVector& query, Index k) const {
    if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
    if (entries_.empty()) throw std::invalid_argument("retrieve: empty index");
    std::vector<ActionSequence> out;
    std::set<ActionSequence> seen;
    for (std::size_t i : ranked(query)) {
        if (static_cast<Index>(out.size()) == k) break;
        if (seen.insert(entries_[i].transcript).second) out.push_back(entries_[i].transcript);
    }
    return out;
}

namespace {
constexpr char kIndexMagic[4] = {'W', 'S', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void EmbeddingIndex::save(const fs::path& path) const {
    std::ostringstream buf(std::ios::binary);
    buf.write(kIndexMagic, 4);
    binio::put_u32(buf, kIndexVersion);
    binio::put_u32(buf, static_cast<std::uint32_t>(entries_.size()));
    binio::put_u32(buf, static_cast<std::uint32_t>(dim()));
    for (const auto& e : entries_) {
        binio::put_u32(buf, static_cast<std::uint32_t>(e.video_id.size()));
        binio::put_bytes(buf, e.video_id);
        for (Index d = 0; d < e.embedding.size(); ++d) binio::put_f64(buf, e.embedding(d));
        binio::put_u32(buf, static_cast<std::uint32_t>(e.transcript.size()));
        for (Index a : e.transcript) binio::put_u32(buf, static_cast<std::uint32_t>(a));
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    binio::put_bytes(out, buf.str());
    if (!out) throw std::runtime_error("cannot write index " + path.string());
}

EmbeddingIndex EmbeddingIndex::load(const fs::path& path) {
    binio::Reader r(binio::slurp(path.string()));
    if (r.bytes(4, "magic") != std::string(kIndexMagic, 4)) throw FormatError("bad index magic", 0);
    if (r.u32("version") != kIndexVersion) throw FormatError("unsupported index version", 4);
    const std::uint32_t count = r.u32("entry count");
    const std::uint32_t dim = r.u32("embedding dimension");
    EmbeddingIndex index;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t id_len = r.u32("id length");
        std::string id = r.bytes(id_len, "video id");
        RowVector v(dim);
        for (std::uint32_t d = 0; d < dim; ++d) v(d) = r.f64("embedding");
        const std::uint32_t n = r.u32("transcript length");
        r.need(std::uint64_t{n} * 4, "transcript");
        ActionSequence t(n);
        for (auto& a : t) a = static_cast<Index>(r.u32("transcript"));
        try {
            index.add(std::move(id), std::move(v), std::move(t));
        } catch (const std::exception& e) {
            throw FormatError(std::string("invalid index entry: ") + e.what(), r.offset());
        }
    }
    if (!r.at_end()) throw FormatError("trailing bytes after index entries", r.offset());
    return index;
}

EmbeddingIndex build_index(const Dataset& data, const std::vector<std::size_t>& videos, const EmbedderParams& params,
                           unsigned jobs) {
    std::vector<RowVector> vectors(videos.size());
    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(videos.size())));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next++) < videos.size();)
            vectors[i] = embed_vector(data.videos[videos[i]].features.frames, params);
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    EmbeddingIndex index;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const Video& v = data.videos[videos[i]];
        index.add(v.features.video_id, std::move(vectors[i]), v.transcript.actions);
    }
    return index;
}

}  // namespace weakseg
