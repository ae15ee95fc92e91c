#include "nexus/model.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "nexus/io.hpp"
#include "nexus/kernels.hpp"
#include "nexus/taped_attention.hpp"

namespace nexus {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

const char* proj_name(Proj p) { return p == Proj::Q ? "q" : p == Proj::K ? "k" : "v"; }

std::string layer_prefix(int layer) { return "L" + std::to_string(layer); }

std::string head_prefix(int layer, int head) {
    return layer_prefix(layer) + ".attn.h" + std::to_string(head);
}

} // namespace

void ModelConfig::sync_attention() {
    attention.num_heads = num_heads;
    attention.d_model = d_model;
    attention.d_k = d_model / std::max(1, num_heads);
}

void ModelConfig::validate() const {
    contract(vocab_size >= 2, "model config: vocab_size must be >= 2");
    contract(d_model >= 1 && num_layers >= 1 && num_heads >= 1, "model config: bad dimensions");
    contract(d_model % num_heads == 0, "model config: d_model must be divisible by num_heads");
    contract(context_length >= 2, "model config: context_length must be >= 2");
    contract(mlp_mult >= 1, "model config: mlp_mult must be >= 1");
    contract(attention.d_model == d_model && attention.num_heads == num_heads &&
                 attention.d_k * attention.num_heads == d_model,
             "model config: attention dims out of sync");
    attention.validate();
}

std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> ids(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
        ids[i] = static_cast<int>(static_cast<unsigned char>(text[i]));
    return ids;
}

std::string detokenize_bytes(const std::vector<int>& ids) {
    std::string s(ids.size(), '\0');
    for (std::size_t i = 0; i < ids.size(); ++i) {
        contract(ids[i] >= 0 && ids[i] < 256, "detokenize_bytes: id out of range");
        s[i] = static_cast<char>(static_cast<unsigned char>(ids[i]));
    }
    return s;
}

TrainState init_state(const ModelConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.config = cfg;
    st.rng = Rng(cfg.seed);
    const double istd = 0.02;
    const int dm = cfg.d_model, dk = cfg.attention.d_k;

    auto put = [&](const std::string& name, Matrix m) {
        st.params.emplace(name, std::move(m));
    };
    auto gauss = [&](std::size_t r, std::size_t c) { return gaussian_matrix(st.rng, r, c, istd); };

    put("tok_emb", gauss(static_cast<std::size_t>(cfg.vocab_size), dm));
    put("pos_emb", gauss(static_cast<std::size_t>(cfg.context_length), dm));
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string lp = layer_prefix(l);
        put(lp + ".ln1.gamma", Matrix(1, dm, 1.0));
        put(lp + ".ln1.beta", Matrix(1, dm, 0.0));
        for (int h = 0; h < cfg.num_heads; ++h) {
            const std::string hp = head_prefix(l, h);
            put(hp + ".w_q", gauss(dm, dk));
            put(hp + ".w_k", gauss(dm, dk));
            put(hp + ".w_v", gauss(dm, dk));
            if (!cfg.attention.weight_shared && cfg.attention.order > 1) {
                for (int lev = 1; lev <= cfg.attention.order - 1; ++lev) {
                    for (Proj pr : {Proj::Q, Proj::K, Proj::V}) {
                        if (!cfg.attention.ho.contains(pr)) continue;
                        const std::string ip =
                            hp + ".inner" + std::to_string(lev) + "." + proj_name(pr);
                        put(ip + ".w_q", gauss(dm, dk));
                        put(ip + ".w_k", gauss(dm, dk));
                        put(ip + ".w_v", gauss(dm, dk));
                    }
                }
            }
        }
        put(lp + ".attn.w_out", gauss(dm, dm));
        put(lp + ".ln2.gamma", Matrix(1, dm, 1.0));
        put(lp + ".ln2.beta", Matrix(1, dm, 0.0));
        put(lp + ".mlp.w1", gauss(dm, static_cast<std::size_t>(cfg.mlp_mult) * dm));
        put(lp + ".mlp.w2", gauss(static_cast<std::size_t>(cfg.mlp_mult) * dm, dm));
    }
    put("final_ln.gamma", Matrix(1, dm, 1.0));
    put("final_ln.beta", Matrix(1, dm, 0.0));
    put("head.w", gauss(dm, static_cast<std::size_t>(cfg.vocab_size)));

    for (const auto& [name, m] : st.params) {
        st.adam_m.emplace(name, Matrix(m.rows, m.cols, 0.0));
        st.adam_v.emplace(name, Matrix(m.rows, m.cols, 0.0));
    }
    return st;
}

Batch sample_batch(const std::vector<int>& corpus_ids, std::size_t batch_size,
                   std::size_t context_length, Rng& rng) {
    contract(batch_size >= 1, "sample_batch: batch_size must be >= 1");
    contract(corpus_ids.size() >= context_length + 1, "sample_batch: corpus shorter than window");
    Batch b;
    b.batch = batch_size;
    b.n = context_length;
    b.inputs.resize(batch_size * context_length);
    b.targets.resize(batch_size * context_length);
    const std::uint64_t starts = corpus_ids.size() - context_length;
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t s = static_cast<std::size_t>(rng.next_below(starts));
        for (std::size_t t = 0; t < context_length; ++t) {
            b.inputs[i * context_length + t] = corpus_ids[s + t];
            b.targets[i * context_length + t] = corpus_ids[s + t + 1];
        }
    }
    return b;
}

namespace {

void check_batch(const ModelConfig& cfg, const Batch& b) {
    contract(b.batch >= 1 && b.n >= 1, "forward: empty batch");
    contract(b.n <= static_cast<std::size_t>(cfg.context_length),
             "forward: sequence longer than context_length");
    contract(b.inputs.size() == b.batch * b.n && b.targets.size() == b.inputs.size(),
             "forward: batch size mismatch");
    for (int id : b.inputs) contract(id >= 0 && id < cfg.vocab_size, "forward: id out of range");
    for (int id : b.targets) contract(id >= 0 && id < cfg.vocab_size, "forward: id out of range");
}

Matrix gather_rows(const Matrix& table, const int* ids, std::size_t n) {
    Matrix out(n, table.cols);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < table.cols; ++c)
            out(r, c) = table(static_cast<std::size_t>(ids[r]), c);
    return out;
}

AttentionParams head_params(const TrainState& st, int layer, int head) {
    const std::string hp = head_prefix(layer, head);
    AttentionParams p;
    p.w_q = st.params.at(hp + ".w_q");
    p.w_k = st.params.at(hp + ".w_k");
    p.w_v = st.params.at(hp + ".w_v");
    const NexusConfig& a = st.config.attention;
    if (!a.weight_shared && a.order > 1) {
        for (int lev = 1; lev <= a.order - 1; ++lev) {
            for (Proj pr : {Proj::Q, Proj::K, Proj::V}) {
                if (!a.ho.contains(pr)) continue;
                const std::string ip = hp + ".inner" + std::to_string(lev) + "." + proj_name(pr);
                InnerTheta t;
                t.level = lev;
                t.proj = pr;
                t.w_q = st.params.at(ip + ".w_q");
                t.w_k = st.params.at(ip + ".w_k");
                t.w_v = st.params.at(ip + ".w_v");
                p.inner.push_back(std::move(t));
            }
        }
    }
    return p;
}

// Per-sequence cross entropy: mean over positions of -log softmax at target.
double sequence_ce(const Matrix& logits, const int* targets) {
    const Matrix ls = log_softmax_rows(logits);
    double acc = 0.0;
    for (std::size_t r = 0; r < ls.rows; ++r)
        acc += -ls(r, static_cast<std::size_t>(targets[r]));
    return acc / static_cast<double>(ls.rows);
}

} // namespace

LmOut forward_lm(const TrainState& st, const Batch& batch,
                 std::vector<std::vector<AttentionTrace>>* traces) {
    const ModelConfig& cfg = st.config;
    cfg.validate();
    check_batch(cfg, batch);
    contract(!traces || batch.batch == 1, "forward: traces require batch == 1");

    std::vector<int> pos(batch.n);
    for (std::size_t t = 0; t < batch.n; ++t) pos[t] = static_cast<int>(t);

    LmOut out;
    double total = 0.0;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        const int* ids = batch.inputs.data() + b * batch.n;
        const int* tgt = batch.targets.data() + b * batch.n;
        Matrix x = add(gather_rows(st.params.at("tok_emb"), ids, batch.n),
                       gather_rows(st.params.at("pos_emb"), pos.data(), batch.n));
        for (int l = 0; l < cfg.num_layers; ++l) {
            const std::string lp = layer_prefix(l);
            Matrix h = layernorm_rows(x, st.params.at(lp + ".ln1.gamma"),
                                      st.params.at(lp + ".ln1.beta"));
            std::vector<AttentionParams> heads;
            heads.reserve(static_cast<std::size_t>(cfg.num_heads));
            for (int hd = 0; hd < cfg.num_heads; ++hd) heads.push_back(head_params(st, l, hd));
            std::vector<AttentionTrace>* sink = nullptr;
            if (traces) {
                traces->emplace_back();
                sink = &traces->back();
            }
            Matrix attn =
                multi_head_nexus(h, heads, cfg.attention, st.params.at(lp + ".attn.w_out"), sink);
            x = add(x, attn);
            Matrix h2 = layernorm_rows(x, st.params.at(lp + ".ln2.gamma"),
                                       st.params.at(lp + ".ln2.beta"));
            Matrix m = matmul(gelu(matmul(h2, st.params.at(lp + ".mlp.w1"))),
                              st.params.at(lp + ".mlp.w2"));
            x = add(x, m);
        }
        x = layernorm_rows(x, st.params.at("final_ln.gamma"), st.params.at("final_ln.beta"));
        Matrix logits = matmul(x, st.params.at("head.w"));
        total = b == 0 ? sequence_ce(logits, tgt) : total + sequence_ce(logits, tgt);
        out.logits.push_back(std::move(logits));
    }
    out.loss = total * (1.0 / static_cast<double>(batch.batch));
    return out;
}

Var build_lm_loss(Tape& t, const TrainState& st, const Batch& batch,
                  std::map<std::string, Var>& leaves) {
    const ModelConfig& cfg = st.config;
    cfg.validate();
    check_batch(cfg, batch);

    leaves.clear();
    for (const auto& [name, m] : st.params) leaves.emplace(name, t.leaf(m, true));

    std::vector<int> pos(batch.n);
    for (std::size_t i = 0; i < batch.n; ++i) pos[i] = static_cast<int>(i);

    auto taped_heads = [&](int l) {
        std::vector<TapedAttentionParams> heads;
        for (int hd = 0; hd < cfg.num_heads; ++hd) {
            const std::string hp = head_prefix(l, hd);
            TapedAttentionParams p;
            p.w_q = leaves.at(hp + ".w_q");
            p.w_k = leaves.at(hp + ".w_k");
            p.w_v = leaves.at(hp + ".w_v");
            const NexusConfig& a = cfg.attention;
            if (!a.weight_shared && a.order > 1) {
                for (int lev = 1; lev <= a.order - 1; ++lev) {
                    for (Proj pr : {Proj::Q, Proj::K, Proj::V}) {
                        if (!a.ho.contains(pr)) continue;
                        const std::string ip =
                            hp + ".inner" + std::to_string(lev) + "." + proj_name(pr);
                        TapedAttentionParams::Inner in;
                        in.level = lev;
                        in.proj = pr;
                        in.w_q = leaves.at(ip + ".w_q");
                        in.w_k = leaves.at(ip + ".w_k");
                        in.w_v = leaves.at(ip + ".w_v");
                        p.inner.push_back(in);
                    }
                }
            }
            heads.push_back(std::move(p));
        }
        return heads;
    };

    Var total;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        std::vector<int> ids(batch.inputs.begin() + static_cast<std::ptrdiff_t>(b * batch.n),
                             batch.inputs.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch.n));
        std::vector<int> tgt(batch.targets.begin() + static_cast<std::ptrdiff_t>(b * batch.n),
                             batch.targets.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch.n));
        Var x = t.add(t.embed(leaves.at("tok_emb"), ids), t.embed(leaves.at("pos_emb"), pos));
        for (int l = 0; l < cfg.num_layers; ++l) {
            const std::string lp = layer_prefix(l);
            Var h = t.layernorm(x, leaves.at(lp + ".ln1.gamma"), leaves.at(lp + ".ln1.beta"));
            Var attn = taped_multi_head_nexus(t, h, taped_heads(l), cfg.attention,
                                              leaves.at(lp + ".attn.w_out"));
            x = t.add(x, attn);
            Var h2 = t.layernorm(x, leaves.at(lp + ".ln2.gamma"), leaves.at(lp + ".ln2.beta"));
            Var m = t.matmul(t.gelu(t.matmul(h2, leaves.at(lp + ".mlp.w1"))),
                             leaves.at(lp + ".mlp.w2"));
            x = t.add(x, m);
        }
        x = t.layernorm(x, leaves.at("final_ln.gamma"), leaves.at("final_ln.beta"));
        Var logits = t.matmul(x, leaves.at("head.w"));
        Var ce = t.cross_entropy_mean(logits, tgt);
        total = b == 0 ? ce : t.add(total, ce);
    }
    return t.scale(total, 1.0 / static_cast<double>(batch.batch));
}

double lr_at(const TrainOptions& opts, std::uint64_t step) {
    if (opts.warmup_steps > 0 && step <= static_cast<std::uint64_t>(opts.warmup_steps))
        return opts.lr * static_cast<double>(step) / static_cast<double>(opts.warmup_steps);
    return opts.lr;
}

void adam_step(TrainState& st, const std::map<std::string, Matrix>& grads,
               const TrainOptions& opts, double lr) {
    for (const auto& [name, g] : grads) {
        if (!g.all_finite())
            throw NumericalError("adam_step: non-finite gradient in '" + name + "' at step " +
                                 std::to_string(st.step + 1));
    }
    double clip_scale = 1.0;
    if (opts.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : grads)
            for (double v : g.data) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > opts.clip_norm) clip_scale = opts.clip_norm / norm;
    }

    st.step += 1;
    const double t = static_cast<double>(st.step);
    const double bc1 = 1.0 - std::pow(opts.beta1, t);
    const double bc2 = 1.0 - std::pow(opts.beta2, t);
    for (auto& [name, p] : st.params) {
        const auto it = grads.find(name);
        if (it == grads.end()) continue;
        contract(it->second.same_shape(p), "adam_step: gradient shape mismatch");
        Matrix& m = st.adam_m.at(name);
        Matrix& v = st.adam_v.at(name);
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = it->second.data[i] * clip_scale;
            m.data[i] = opts.beta1 * m.data[i] + (1.0 - opts.beta1) * g;
            v.data[i] = opts.beta2 * v.data[i] + (1.0 - opts.beta2) * g * g;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + opts.adam_eps);
        }
    }
}

void train(TrainState& st, const std::string& corpus, const TrainOptions& opts,
           std::vector<MetricsRow>& metrics) {
    st.config.validate();
    contract(corpus.size() >= 10ull * static_cast<std::size_t>(st.config.context_length),
             "train: corpus smaller than 10 context windows");
    const std::vector<int> ids = tokenize_bytes(corpus);
    const auto t0 = std::chrono::steady_clock::now();

    for (std::uint64_t s = 0; s < opts.steps; ++s) {
        const Batch batch = sample_batch(ids, opts.batch_size,
                                         static_cast<std::size_t>(st.config.context_length),
                                         st.rng);
        Tape tape;
        std::map<std::string, Var> leaves;
        const Var loss = build_lm_loss(tape, st, batch, leaves);
        const double lossv = tape.value(loss)(0, 0);
        if (!std::isfinite(lossv))
            throw NumericalError("train: loss diverged (non-finite) at step " +
                                 std::to_string(st.step + 1));

        const std::vector<Matrix> gv = tape.backward(loss);
        std::map<std::string, Matrix> grads;
        std::size_t k = 0;
        for (const auto& [name, var] : leaves) {
            (void)var;
            grads.emplace(name, gv[k++]);
        }
        const double lr = lr_at(opts, st.step + 1);
        adam_step(st, grads, opts, lr);

        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        metrics.push_back(MetricsRow{st.step, lossv, lr, ms});
    }
}

double eval_loss(const TrainState& st, const std::string& corpus, std::size_t windows, Rng& rng) {
    contract(windows >= 1, "eval_loss: need at least one window");
    const std::vector<int> ids = tokenize_bytes(corpus);
    const Batch b =
        sample_batch(ids, windows, static_cast<std::size_t>(st.config.context_length), rng);
    return forward_lm(st, b).loss;
}

std::vector<int> greedy_sample(const TrainState& st, std::vector<int> prompt, std::size_t count) {
    contract(!prompt.empty(), "greedy_sample: empty prompt");
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t n =
            std::min(prompt.size(), static_cast<std::size_t>(st.config.context_length));
        Batch b;
        b.batch = 1;
        b.n = n;
        b.inputs.assign(prompt.end() - static_cast<std::ptrdiff_t>(n), prompt.end());
        b.targets.assign(n, 0);
        const LmOut out = forward_lm(st, b);
        const Matrix& logits = out.logits[0];
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols; ++c)
            if (logits(n - 1, c) > logits(n - 1, best)) best = c;
        prompt.push_back(static_cast<int>(best));
    }
    return prompt;
}

// ---- checkpoint serialization -------------------------------------------

namespace {

constexpr char kMagic[4] = {'N', 'X', 'S', 'C'};
constexpr std::uint8_t kVersion = 0x01;

void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }

void put_u16(std::string& b, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_tensor(std::string& b, const std::string& name, const Matrix& m) {
    contract(name.size() <= 0xffff, "checkpoint: tensor name too long");
    put_u16(b, static_cast<std::uint16_t>(name.size()));
    b.append(name);
    put_u8(b, 2);
    put_u64(b, m.rows);
    put_u64(b, m.cols);
    const std::size_t bytes = m.data.size() * sizeof(double);
    const std::size_t off = b.size();
    b.resize(off + bytes);
    std::memcpy(b.data() + off, m.data.data(), bytes);
}

struct Cursor {
    const std::string& buf;
    std::size_t off = 0;

    void need(std::size_t n, const char* what) const {
        if (off + n > buf.size())
            throw FormatError(std::string("checkpoint truncated reading ") + what, off);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[off++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[off + i])) << (8 * i);
        off += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + i])) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[off + i])) << (8 * i);
        off += 8;
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(off, n);
        off += n;
        return s;
    }
};

} // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
    std::string b;
    b.append(kMagic, 4);
    put_u8(b, kVersion);
    const std::size_t count = st.params.size() + st.adam_m.size() + st.adam_v.size();
    contract(count <= 0xffffffffull, "checkpoint: too many tensors");
    put_u32(b, static_cast<std::uint32_t>(count));
    for (const auto& [name, m] : st.params) put_tensor(b, name, m);
    for (const auto& [name, m] : st.adam_m) put_tensor(b, "adam.m." + name, m);
    for (const auto& [name, m] : st.adam_v) put_tensor(b, "adam.v." + name, m);
    put_u64(b, st.step);
    put_u64(b, st.rng.state);
    write_file_atomic(path, b);
}

TrainState load_checkpoint(const std::string& path, const ModelConfig& cfg) {
    const std::string buf = read_file(path);
    TrainState st = init_state(cfg);

    Cursor c{buf};
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic", 0);
    c.off = 4;
    const std::uint8_t version = c.u8("version");
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
    const std::uint32_t count = c.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t tensor_off = c.off;
        const std::uint16_t name_len = c.u16("tensor name length");
        const std::string name = c.bytes(name_len, "tensor name");
        const std::uint8_t ndim = c.u8("tensor ndim");
        if (ndim != 1 && ndim != 2)
            throw FormatError("checkpoint: unsupported ndim for '" + name + "'", tensor_off);
        std::size_t rows = 1, cols = 1;
        if (ndim == 1) {
            cols = c.u64("tensor dim");
        } else {
            rows = c.u64("tensor dim 0");
            cols = c.u64("tensor dim 1");
        }
        std::map<std::string, Matrix>* target = &st.params;
        std::string base = name;
        if (name.rfind("adam.m.", 0) == 0) {
            target = &st.adam_m;
            base = name.substr(7);
        } else if (name.rfind("adam.v.", 0) == 0) {
            target = &st.adam_v;
            base = name.substr(7);
        }
        const auto it = target->find(base);
        if (it == target->end())
            throw FormatError("checkpoint: unknown tensor '" + name + "' for this config",
                              tensor_off);
        if (it->second.rows != rows || it->second.cols != cols)
            throw FormatError("checkpoint: shape mismatch for '" + name + "'", tensor_off);
        const std::size_t bytes = rows * cols * sizeof(double);
        c.need(bytes, "tensor data");
        std::memcpy(it->second.data.data(), buf.data() + c.off, bytes);
        c.off += bytes;
    }
    st.step = c.u64("step counter");
    st.rng.state = c.u64("rng state");
    if (c.off != buf.size())
        throw FormatError("checkpoint: trailing bytes after rng state", c.off);
    return st;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream ss;
    ss << "step,loss,lr,elapsed_ms\n";
    ss << std::setprecision(17);
    for (const MetricsRow& r : rows)
        ss << r.step << ',' << r.loss << ',' << r.lr << ',' << std::fixed
           << std::setprecision(3) << r.elapsed_ms << std::defaultfloat << std::setprecision(17)
           << '\n';
    return std::move(ss).str();
}

} // namespace nexus
