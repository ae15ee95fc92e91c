#pragma once
#include <functional>
#include <string>
#include <vector>

#include "nexus/matrix.hpp"

namespace nexus {

struct Var {
    int id = -1;
    std::size_t rows = 0, cols = 0;
};

enum class Op {
    Leaf,
    Add,
    Scale,
    Matmul,
    MatmulNT,
    SoftmaxRows,
    Gelu,
    LayerNorm,
    Embed,
    CrossEntropyMean,
    SoftCrossEntropy,
    DotConst,
    SumAll,
    ConcatCols,
};

struct TapeNode {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1; // input node ids
    Matrix value;               // cached forward result
    Matrix aux;                 // op-specific cache (log-softmax) or constant operand
    std::vector<int> ids;       // embedding rows / cross-entropy targets
    double scalar = 0.0;        // scale factor / layernorm eps
    bool causal = false;        // softmax masking
    bool is_param = false;
};

// Append-only reverse-mode tape. Forward values are computed eagerly with the
// same kernels the tape-free code paths use, so a taped forward is
// bit-identical to its plain counterpart. Single-writer; one tape per thread.
class Tape {
public:
    Var leaf(Matrix value, bool is_param = true);
    Var add(Var x, Var y);
    Var scale(Var x, double s);
    Var matmul(Var a, Var b);    // a * b
    Var matmul_nt(Var a, Var b); // a * b^T
    // optional causal mask applied to the (already scaled) logits
    Var softmax_rows(Var x, bool causal);
    Var gelu(Var x);
    Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
    // rows of table gathered by ids
    Var embed(Var table, std::vector<int> ids);
    // mean over rows of -log softmax(logits)[r, targets[r]]; scalar output.
    // Fused with the softmax for backward stability.
    Var cross_entropy_mean(Var logits, std::vector<int> targets);
    // mean over rows of the cross-entropy between softmax(scores) and a
    // constant row-stochastic target matrix; scalar output
    Var soft_cross_entropy(Var scores, Matrix target);
    Var dot_const(Var x, Matrix weights); // sum(x .* weights), scalar output
    Var sum_all(Var x);
    Var concat_cols(Var x, Var y);

    const Matrix& value(Var v) const;
    std::size_t size() const { return nodes_.size(); }
    const std::vector<int>& param_ids() const { return params_; }

    // Reverse accumulation from a scalar loss; returns one gradient per
    // param_ids() entry (zeros for parameters the loss does not reach).
    // Deterministic: fixed reverse node order, fixed accumulation order.
    std::vector<Matrix> backward(Var loss) const;

private:
    std::vector<TapeNode> nodes_;
    std::vector<int> params_;
    Var push(TapeNode n);
    const TapeNode& at(Var v) const;
};

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_param = 0; // index into params
    std::size_t worst_coord = 0; // flat index within that parameter
    double eps = 0.0;
};

// Central-difference check of backward() for a scalar function of params.
// build is called with a fresh tape and one leaf per parameter; relative
// error per coordinate is |analytic - numeric| / max(1e-8, |analytic| +
// |numeric|). Throws NumericalError if any evaluation is non-finite.
GradCheckReport grad_check(const std::string& name,
                           const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                           const std::vector<Matrix>& params, double eps = 1e-4);

} // namespace nexus
