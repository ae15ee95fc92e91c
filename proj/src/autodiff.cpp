#include "nexus/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "nexus/kernels.hpp"

namespace nexus {

Var Tape::push(TapeNode n) {
    Var v;
    v.id = static_cast<int>(nodes_.size());
    v.rows = n.value.rows;
    v.cols = n.value.cols;
    if (n.is_param) params_.push_back(v.id);
    nodes_.push_back(std::move(n));
    return v;
}

const TapeNode& Tape::at(Var v) const {
    contract(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "tape: invalid var");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return at(v).value; }

Var Tape::leaf(Matrix value, bool is_param) {
    TapeNode n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.is_param = is_param;
    return push(std::move(n));
}

Var Tape::add(Var x, Var y) {
    TapeNode n;
    n.op = Op::Add;
    n.a = x.id;
    n.b = y.id;
    n.value = nexus::add(value(x), value(y));
    return push(std::move(n));
}

Var Tape::scale(Var x, double s) {
    TapeNode n;
    n.op = Op::Scale;
    n.a = x.id;
    n.scalar = s;
    n.value = scaled(value(x), s);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    TapeNode n;
    n.op = Op::Matmul;
    n.a = a.id;
    n.b = b.id;
    n.value = nexus::matmul(value(a), value(b));
    return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
    TapeNode n;
    n.op = Op::MatmulNT;
    n.a = a.id;
    n.b = b.id;
    n.value = nexus::matmul_nt(value(a), value(b));
    return push(std::move(n));
}

Var Tape::softmax_rows(Var x, bool causal) {
    TapeNode n;
    n.op = Op::SoftmaxRows;
    n.a = x.id;
    n.causal = causal;
    Matrix s = value(x);
    if (causal) apply_causal_mask(s);
    n.value = nexus::softmax_rows(s);
    return push(std::move(n));
}

Var Tape::gelu(Var x) {
    TapeNode n;
    n.op = Op::Gelu;
    n.a = x.id;
    n.value = nexus::gelu(value(x));
    return push(std::move(n));
}

Var Tape::layernorm(Var x, Var gamma, Var beta, double eps) {
    TapeNode n;
    n.op = Op::LayerNorm;
    n.a = x.id;
    n.b = gamma.id;
    n.c = beta.id;
    n.scalar = eps;
    n.value = layernorm_rows(value(x), value(gamma), value(beta), eps);
    return push(std::move(n));
}

Var Tape::embed(Var table, std::vector<int> ids) {
    const Matrix& t = value(table);
    Matrix out(ids.size(), t.cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        contract(ids[r] >= 0 && ids[r] < static_cast<int>(t.rows), "embed: id out of range");
        for (std::size_t c = 0; c < t.cols; ++c) out(r, c) = t(static_cast<std::size_t>(ids[r]), c);
    }
    TapeNode n;
    n.op = Op::Embed;
    n.a = table.id;
    n.ids = std::move(ids);
    n.value = std::move(out);
    return push(std::move(n));
}

Var Tape::cross_entropy_mean(Var logits, std::vector<int> targets) {
    const Matrix& lg = value(logits);
    contract(targets.size() == lg.rows, "cross_entropy_mean: target count mismatch");
    Matrix ls = log_softmax_rows(lg);
    double acc = 0.0;
    for (std::size_t r = 0; r < lg.rows; ++r) {
        contract(targets[r] >= 0 && targets[r] < static_cast<int>(lg.cols),
                 "cross_entropy_mean: target out of range");
        acc += -ls(r, static_cast<std::size_t>(targets[r]));
    }
    TapeNode n;
    n.op = Op::CrossEntropyMean;
    n.a = logits.id;
    n.ids = std::move(targets);
    n.aux = std::move(ls);
    n.value = Matrix(1, 1, acc / static_cast<double>(lg.rows));
    return push(std::move(n));
}

Var Tape::soft_cross_entropy(Var scores, Matrix target) {
    const Matrix& s = value(scores);
    contract(s.same_shape(target), "soft_cross_entropy: shape mismatch");
    Matrix ls = log_softmax_rows(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) acc += -target.data[i] * ls.data[i];
    TapeNode n;
    n.op = Op::SoftCrossEntropy;
    n.a = scores.id;
    n.aux = std::move(target);
    n.value = Matrix(1, 1, acc / static_cast<double>(s.rows));
    return push(std::move(n));
}

Var Tape::dot_const(Var x, Matrix weights) {
    const Matrix& v = value(x);
    contract(v.same_shape(weights), "dot_const: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i) acc += v.data[i] * weights.data[i];
    TapeNode n;
    n.op = Op::DotConst;
    n.a = x.id;
    n.aux = std::move(weights);
    n.value = Matrix(1, 1, acc);
    return push(std::move(n));
}

Var Tape::sum_all(Var x) {
    const Matrix& v = value(x);
    double acc = 0.0;
    for (double d : v.data) acc += d;
    TapeNode n;
    n.op = Op::SumAll;
    n.a = x.id;
    n.value = Matrix(1, 1, acc);
    return push(std::move(n));
}

Var Tape::concat_cols(Var x, Var y) {
    TapeNode n;
    n.op = Op::ConcatCols;
    n.a = x.id;
    n.b = y.id;
    n.value = hcat(value(x), value(y));
    return push(std::move(n));
}

namespace {

void accum(std::vector<Matrix>& grads, const std::vector<TapeNode>& nodes, int id,
           const Matrix& delta) {
    Matrix& g = grads[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Matrix(nodes[static_cast<std::size_t>(id)].value.rows,
                                  nodes[static_cast<std::size_t>(id)].value.cols);
    contract(g.same_shape(delta), "backward: gradient shape mismatch");
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
}

double gelu_derivative(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double phi_pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return phi_cdf + x * phi_pdf;
}

} // namespace

std::vector<Matrix> Tape::backward(Var loss) const {
    contract(loss.rows == 1 && loss.cols == 1, "backward: loss must be scalar-shaped");
    const TapeNode& ln = at(loss);
    (void)ln;

    std::vector<Matrix> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.id)] = Matrix(1, 1, 1.0);

    for (int id = loss.id; id >= 0; --id) {
        const Matrix& g = grads[static_cast<std::size_t>(id)];
        if (g.size() == 0) continue;
        const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add:
            accum(grads, nodes_, n.a, g);
            accum(grads, nodes_, n.b, g);
            break;
        case Op::Scale:
            accum(grads, nodes_, n.a, scaled(g, n.scalar));
            break;
        case Op::Matmul: {
            const Matrix& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Matrix& b = nodes_[static_cast<std::size_t>(n.b)].value;
            accum(grads, nodes_, n.a, nexus::matmul_nt(g, b)); // G B^T
            accum(grads, nodes_, n.b, matmul_tn(a, g));        // A^T G
            break;
        }
        case Op::MatmulNT: {
            const Matrix& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Matrix& b = nodes_[static_cast<std::size_t>(n.b)].value;
            accum(grads, nodes_, n.a, nexus::matmul(g, b)); // G B
            accum(grads, nodes_, n.b, matmul_tn(g, a));     // G^T A
            break;
        }
        case Op::SoftmaxRows: {
            const Matrix& y = n.value;
            Matrix dx(y.rows, y.cols);
            for (std::size_t i = 0; i < y.rows; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < y.cols; ++j)
                    dx(i, j) = y(i, j) * (g(i, j) - dot);
            }
            accum(grads, nodes_, n.a, dx);
            break;
        }
        case Op::Gelu: {
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            Matrix dx(x.rows, x.cols);
            for (std::size_t i = 0; i < x.data.size(); ++i)
                dx.data[i] = g.data[i] * gelu_derivative(x.data[i]);
            accum(grads, nodes_, n.a, dx);
            break;
        }
        case Op::LayerNorm: {
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            const Matrix& gamma = nodes_[static_cast<std::size_t>(n.b)].value;
            const double cols = static_cast<double>(x.cols);
            Matrix dx(x.rows, x.cols);
            Matrix dgamma(1, x.cols);
            Matrix dbeta(1, x.cols);
            for (std::size_t i = 0; i < x.rows; ++i) {
                double mean = 0.0;
                for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
                mean /= cols;
                double var = 0.0;
                for (std::size_t j = 0; j < x.cols; ++j) {
                    const double d = x(i, j) - mean;
                    var += d * d;
                }
                var /= cols;
                const double inv = 1.0 / std::sqrt(var + n.scalar);
                double mean_h = 0.0, mean_hx = 0.0;
                for (std::size_t j = 0; j < x.cols; ++j) {
                    const double xhat = (x(i, j) - mean) * inv;
                    const double h = g(i, j) * gamma.data[j];
                    dgamma.data[j] += g(i, j) * xhat;
                    dbeta.data[j] += g(i, j);
                    mean_h += h;
                    mean_hx += h * xhat;
                }
                mean_h /= cols;
                mean_hx /= cols;
                for (std::size_t j = 0; j < x.cols; ++j) {
                    const double xhat = (x(i, j) - mean) * inv;
                    const double h = g(i, j) * gamma.data[j];
                    dx(i, j) = inv * (h - mean_h - xhat * mean_hx);
                }
            }
            accum(grads, nodes_, n.a, dx);
            accum(grads, nodes_, n.b, dgamma);
            accum(grads, nodes_, n.c, dbeta);
            break;
        }
        case Op::Embed: {
            const Matrix& t = nodes_[static_cast<std::size_t>(n.a)].value;
            Matrix dt(t.rows, t.cols);
            for (std::size_t r = 0; r < n.ids.size(); ++r)
                for (std::size_t c = 0; c < t.cols; ++c)
                    dt(static_cast<std::size_t>(n.ids[r]), c) += g(r, c);
            accum(grads, nodes_, n.a, dt);
            break;
        }
        case Op::CrossEntropyMean: {
            const double s = g(0, 0) / static_cast<double>(n.aux.rows);
            Matrix dl(n.aux.rows, n.aux.cols);
            for (std::size_t i = 0; i < n.aux.rows; ++i)
                for (std::size_t j = 0; j < n.aux.cols; ++j)
                    dl(i, j) = std::exp(n.aux(i, j)) * s;
            for (std::size_t i = 0; i < n.ids.size(); ++i)
                dl(i, static_cast<std::size_t>(n.ids[i])) -= s;
            accum(grads, nodes_, n.a, dl);
            break;
        }
        case Op::SoftCrossEntropy: {
            const Matrix& scores = nodes_[static_cast<std::size_t>(n.a)].value;
            const double s = g(0, 0) / static_cast<double>(scores.rows);
            const Matrix ls = log_softmax_rows(scores);
            Matrix dl(scores.rows, scores.cols);
            for (std::size_t i = 0; i < ls.data.size(); ++i)
                dl.data[i] = (std::exp(ls.data[i]) - n.aux.data[i]) * s;
            accum(grads, nodes_, n.a, dl);
            break;
        }
        case Op::DotConst:
            accum(grads, nodes_, n.a, scaled(n.aux, g(0, 0)));
            break;
        case Op::SumAll: {
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            accum(grads, nodes_, n.a, Matrix(x.rows, x.cols, g(0, 0)));
            break;
        }
        case Op::ConcatCols: {
            const Matrix& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Matrix& b = nodes_[static_cast<std::size_t>(n.b)].value;
            Matrix da(a.rows, a.cols), db(b.rows, b.cols);
            for (std::size_t i = 0; i < a.rows; ++i) {
                for (std::size_t j = 0; j < a.cols; ++j) da(i, j) = g(i, j);
                for (std::size_t j = 0; j < b.cols; ++j) db(i, j) = g(i, a.cols + j);
            }
            accum(grads, nodes_, n.a, da);
            accum(grads, nodes_, n.b, db);
            break;
        }
        }
    }

    std::vector<Matrix> out;
    out.reserve(params_.size());
    for (int pid : params_) {
        Matrix& g = grads[static_cast<std::size_t>(pid)];
        if (g.size() == 0)
            g = Matrix(nodes_[static_cast<std::size_t>(pid)].value.rows,
                       nodes_[static_cast<std::size_t>(pid)].value.cols);
        out.push_back(std::move(g));
    }
    return out;
}

GradCheckReport grad_check(const std::string& name,
                           const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                           const std::vector<Matrix>& params, double eps) {
    contract(eps > 0.0, "grad_check: eps must be positive");
    for (const Matrix& p : params) contract(p.all_finite(), "grad_check: non-finite params");

    const auto eval = [&](const std::vector<Matrix>& ps, std::vector<Matrix>* grads_out) {
        Tape t;
        std::vector<Var> leaves;
        leaves.reserve(ps.size());
        for (const Matrix& p : ps) leaves.push_back(t.leaf(p, true));
        Var loss = build(t, leaves);
        contract(loss.rows == 1 && loss.cols == 1, "grad_check: loss must be scalar");
        const double v = t.value(loss)(0, 0);
        if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss for " + name);
        if (grads_out) *grads_out = t.backward(loss);
        return v;
    };

    std::vector<Matrix> analytic;
    eval(params, &analytic);

    GradCheckReport rep;
    rep.name = name;
    rep.eps = eps;
    std::vector<Matrix> work = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].data.size(); ++i) {
            const double orig = work[p].data[i];
            work[p].data[i] = orig + eps;
            const double fp = eval(work, nullptr);
            work[p].data[i] = orig - eps;
            const double fm = eval(work, nullptr);
            work[p].data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[p].data[i];
            const double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p;
                rep.worst_coord = i;
            }
        }
    }
    return rep;
}

} // namespace nexus
