#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vibsim/common.hpp"
#include "vibsim/tensor.hpp"

namespace vibsim::nn {

// Reverse-mode tape over dense matrix nodes. A graph is built once per
// training step: ops are appended in evaluation order, forward() fills the
// node values, backward() sweeps the tape in reverse and accumulates
// gradients into the registered Parameters.
class Graph {
public:
    using Var = int;

    enum class Op {
        kInput,
        kParam,
        kAffine,        // x (B×n), W (n×m), b (1×m) -> B×m
        kAdd,
        kSub,
        kMul,
        kDiv,
        kAddRowVec,     // (B×n) + (1×n)
        kSubColVec,     // (B×n) - (B×1), column broadcast
        kTanh,
        kExp,
        kLog,
        kSoftplus,
        kSqrt,
        kSquare,
        kScale,         // x * constant
        kAddConst,      // x + constant
        kRowSum,        // B×n -> B×1
        kSumAll,        // B×n -> 1×1
        kLogSumExpRows, // B×n -> B×1, max-subtracted
        kGatherCols,    // y[i] = x[i, idx[i]]
        kGaussLogDensity,   // z (B×d), means (K×d), vars (K×d) -> B×K
        kLogMatmulActions,  // m (B×K), logT (A*K×K), action ids -> B×K
    };

    Var input(Tensor value) {
        Node n;
        n.op = Op::kInput;
        n.value = std::move(value);
        return push(std::move(n));
    }

    Var param(Parameter& p) {
        Node n;
        n.op = Op::kParam;
        n.param = &p;
        n.value = Tensor(p.value.rows, p.value.cols);
        return push(std::move(n));
    }

    Var affine(Var x, Var w, Var b) {
        const Tensor& xv = shape(x);
        const Tensor& wv = shape(w);
        const Tensor& bv = shape(b);
        if (xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols) {
            throw UsageError("affine: shape mismatch (" + dims(x) + " * " + dims(w) + " + " + dims(b) + ")");
        }
        Node n;
        n.op = Op::kAffine;
        n.a = x;
        n.b = w;
        n.c = b;
        n.value = Tensor(xv.rows, wv.cols);
        return push(std::move(n));
    }

    Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
    Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
    Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }
    Var div(Var a, Var b) { return binary(Op::kDiv, a, b); }

    Var add_rowvec(Var m, Var r) {
        const Tensor& mv = shape(m);
        const Tensor& rv = shape(r);
        if (rv.rows != 1 || rv.cols != mv.cols) {
            throw UsageError("add_rowvec: shape mismatch (" + dims(m) + " + " + dims(r) + ")");
        }
        Node n;
        n.op = Op::kAddRowVec;
        n.a = m;
        n.b = r;
        n.value = Tensor(mv.rows, mv.cols);
        return push(std::move(n));
    }

    Var sub_colvec(Var m, Var c) {
        const Tensor& mv = shape(m);
        const Tensor& cv = shape(c);
        if (cv.cols != 1 || cv.rows != mv.rows) {
            throw UsageError("sub_colvec: shape mismatch (" + dims(m) + " - " + dims(c) + ")");
        }
        Node n;
        n.op = Op::kSubColVec;
        n.a = m;
        n.b = c;
        n.value = Tensor(mv.rows, mv.cols);
        return push(std::move(n));
    }

    Var tanh_(Var x) { return unary(Op::kTanh, x); }
    Var exp_(Var x) { return unary(Op::kExp, x); }
    Var log_(Var x) { return unary(Op::kLog, x); }
    Var softplus_(Var x) { return unary(Op::kSoftplus, x); }
    Var sqrt_(Var x) { return unary(Op::kSqrt, x); }
    Var square(Var x) { return unary(Op::kSquare, x); }

    Var scale(Var x, double k) {
        Var v = unary(Op::kScale, x);
        nodes_[v].scalar = k;
        return v;
    }

    Var add_const(Var x, double k) {
        Var v = unary(Op::kAddConst, x);
        nodes_[v].scalar = k;
        return v;
    }

    Var row_sum(Var x) {
        Node n;
        n.op = Op::kRowSum;
        n.a = x;
        n.value = Tensor(shape(x).rows, 1);
        return push(std::move(n));
    }

    Var sum_all(Var x) {
        Node n;
        n.op = Op::kSumAll;
        n.a = x;
        n.value = Tensor(1, 1);
        return push(std::move(n));
    }

    Var log_sum_exp_rows(Var x) {
        Node n;
        n.op = Op::kLogSumExpRows;
        n.a = x;
        n.value = Tensor(shape(x).rows, 1);
        return push(std::move(n));
    }

    Var gather_cols(Var x, std::vector<int> col_of_row) {
        const Tensor& xv = shape(x);
        if (static_cast<int>(col_of_row.size()) != xv.rows) {
            throw UsageError("gather_cols: need one column index per row");
        }
        for (int c : col_of_row) {
            if (c < 0 || c >= xv.cols) throw UsageError("gather_cols: column index out of range");
        }
        Node n;
        n.op = Op::kGatherCols;
        n.a = x;
        n.indices = std::move(col_of_row);
        n.value = Tensor(xv.rows, 1);
        return push(std::move(n));
    }

    // L[b,k] = log N(z_b | mu_k, diag(var_k)); the density composite keeps the
    // K x d quadratic form out of the generic op set.
    Var gauss_log_density(Var z, Var means, Var vars) {
        const Tensor& zv = shape(z);
        const Tensor& mv = shape(means);
        const Tensor& vv = shape(vars);
        if (mv.cols != zv.cols || !mv.same_shape(vv)) {
            throw UsageError("gauss_log_density: shape mismatch");
        }
        Node n;
        n.op = Op::kGaussLogDensity;
        n.a = z;
        n.b = means;
        n.c = vars;
        n.value = Tensor(zv.rows, mv.rows);
        return push(std::move(n));
    }

    // U[b,l] = logsumexp_k( m[b,k] + logT[a_b*K + k, l] ) — one K×K block of
    // logT per action, rows of the batch select their own block.
    Var log_matmul_actions(Var m, Var log_t, std::vector<int> actions) {
        const Tensor& mv = shape(m);
        const Tensor& tv = shape(log_t);
        int K = mv.cols;
        if (tv.cols != K || tv.rows % K != 0) {
            throw UsageError("log_matmul_actions: logT must be (A*K) x K");
        }
        int n_act = tv.rows / K;
        if (static_cast<int>(actions.size()) != mv.rows) {
            throw UsageError("log_matmul_actions: need one action per row");
        }
        for (int a : actions) {
            if (a < 0 || a >= n_act) throw UsageError("log_matmul_actions: action id out of range");
        }
        Node n;
        n.op = Op::kLogMatmulActions;
        n.a = m;
        n.b = log_t;
        n.indices = std::move(actions);
        n.value = Tensor(mv.rows, K);
        return push(std::move(n));
    }

    const Tensor& value(Var v) const {
        if (!forward_done_) throw UsageError("value: run forward() first");
        return nodes_[v].value;
    }

    double scalar_value(Var v) const {
        const Tensor& t = value(v);
        if (t.size() != 1) throw UsageError("scalar_value: node is not 1x1");
        return t.data[0];
    }

    void forward() {
        for (Node& n : nodes_) eval(n);
        forward_done_ = true;
    }

    // Seeds the output adjoint and sweeps the tape in reverse; Parameter
    // gradients accumulate (call zero_grad between optimizer steps).
    void backward(Var out, double seed = 1.0) {
        if (!forward_done_) throw UsageError("backward: run forward() first");
        for (Node& n : nodes_) {
            n.adjoint = Tensor(n.value.rows, n.value.cols);
        }
        if (nodes_[out].value.size() != 1) {
            throw UsageError("backward: scalar seed requires a 1x1 output node");
        }
        nodes_[out].adjoint.data[0] = seed;
        run_backward();
    }

    void backward(Var out, const Tensor& seed) {
        if (!forward_done_) throw UsageError("backward: run forward() first");
        if (!seed.same_shape(nodes_[out].value)) {
            throw UsageError("backward: seed shape mismatch");
        }
        for (Node& n : nodes_) {
            n.adjoint = Tensor(n.value.rows, n.value.cols);
        }
        nodes_[out].adjoint = seed;
        run_backward();
    }

    // Adjoint of a node from the last backward pass (inputs included).
    const Tensor& adjoint(Var v) const { return nodes_[v].adjoint; }

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Op op = Op::kInput;
        int a = -1, b = -1, c = -1;
        double scalar = 0.0;
        std::vector<int> indices;
        Parameter* param = nullptr;
        Tensor value;
        Tensor adjoint;
    };

    std::vector<Node> nodes_;
    bool forward_done_ = false;

    Var push(Node n) {
        forward_done_ = false;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& shape(Var v) const { return nodes_[v].value; }

    std::string dims(Var v) const {
        return std::to_string(shape(v).rows) + "x" + std::to_string(shape(v).cols);
    }

    Var binary(Op op, Var a, Var b) {
        if (!shape(a).same_shape(shape(b))) {
            throw UsageError("elementwise op: shape mismatch (" + dims(a) + " vs " + dims(b) + ")");
        }
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = Tensor(shape(a).rows, shape(a).cols);
        return push(std::move(n));
    }

    Var unary(Op op, Var a) {
        Node n;
        n.op = op;
        n.a = a;
        n.value = Tensor(shape(a).rows, shape(a).cols);
        return push(std::move(n));
    }

    void eval(Node& n) {
        switch (n.op) {
            case Op::kInput:
                break;
            case Op::kParam:
                n.value = n.param->value;
                break;
            case Op::kAffine: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& w = nodes_[n.b].value;
                const Tensor& b = nodes_[n.c].value;
                Tensor& y = n.value;
                for (int i = 0; i < y.rows; ++i) {
                    double* yi = &y.data[static_cast<std::size_t>(i) * y.cols];
                    for (int j = 0; j < y.cols; ++j) yi[j] = b.data[j];
                    const double* xi = &x.data[static_cast<std::size_t>(i) * x.cols];
                    for (int k = 0; k < x.cols; ++k) {
                        double xv = xi[k];
                        if (xv == 0.0) continue;
                        const double* wk = &w.data[static_cast<std::size_t>(k) * w.cols];
                        for (int j = 0; j < y.cols; ++j) yi[j] += xv * wk[j];
                    }
                }
                break;
            }
            case Op::kAdd: ew(n, [](double a, double b) { return a + b; }); break;
            case Op::kSub: ew(n, [](double a, double b) { return a - b; }); break;
            case Op::kMul: ew(n, [](double a, double b) { return a * b; }); break;
            case Op::kDiv: ew(n, [](double a, double b) { return a / b; }); break;
            case Op::kAddRowVec: {
                const Tensor& m = nodes_[n.a].value;
                const Tensor& r = nodes_[n.b].value;
                for (int i = 0; i < m.rows; ++i) {
                    for (int j = 0; j < m.cols; ++j) n.value.at(i, j) = m.at(i, j) + r.data[j];
                }
                break;
            }
            case Op::kSubColVec: {
                const Tensor& m = nodes_[n.a].value;
                const Tensor& c = nodes_[n.b].value;
                for (int i = 0; i < m.rows; ++i) {
                    for (int j = 0; j < m.cols; ++j) n.value.at(i, j) = m.at(i, j) - c.data[i];
                }
                break;
            }
            case Op::kTanh: un(n, [](double x) { return std::tanh(x); }); break;
            case Op::kExp: un(n, [](double x) { return std::exp(x); }); break;
            case Op::kLog: un(n, [](double x) { return std::log(x); }); break;
            case Op::kSoftplus: un(n, [](double x) { return softplus(x); }); break;
            case Op::kSqrt: un(n, [](double x) { return std::sqrt(x); }); break;
            case Op::kSquare: un(n, [](double x) { return x * x; }); break;
            case Op::kScale: un(n, [k = n.scalar](double x) { return x * k; }); break;
            case Op::kAddConst: un(n, [k = n.scalar](double x) { return x + k; }); break;
            case Op::kRowSum: {
                const Tensor& x = nodes_[n.a].value;
                for (int i = 0; i < x.rows; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < x.cols; ++j) s += x.at(i, j);
                    n.value.data[i] = s;
                }
                break;
            }
            case Op::kSumAll: {
                const Tensor& x = nodes_[n.a].value;
                double s = 0.0;
                for (double v : x.data) s += v;
                n.value.data[0] = s;
                break;
            }
            case Op::kLogSumExpRows: {
                const Tensor& x = nodes_[n.a].value;
                for (int i = 0; i < x.rows; ++i) {
                    std::span<const double> row(&x.data[static_cast<std::size_t>(i) * x.cols],
                                                static_cast<std::size_t>(x.cols));
                    n.value.data[i] = log_sum_exp(row);
                }
                break;
            }
            case Op::kGatherCols: {
                const Tensor& x = nodes_[n.a].value;
                for (int i = 0; i < x.rows; ++i) n.value.data[i] = x.at(i, n.indices[i]);
                break;
            }
            case Op::kGaussLogDensity: {
                const Tensor& z = nodes_[n.a].value;
                const Tensor& mu = nodes_[n.b].value;
                const Tensor& var = nodes_[n.c].value;
                int d = z.cols;
                for (int bi = 0; bi < z.rows; ++bi) {
                    for (int k = 0; k < mu.rows; ++k) {
                        double s = 0.0;
                        for (int i = 0; i < d; ++i) {
                            double diff = z.at(bi, i) - mu.at(k, i);
                            s += std::log(var.at(k, i)) + diff * diff / var.at(k, i);
                        }
                        n.value.at(bi, k) = -0.5 * (d * kLogTwoPi + s);
                    }
                }
                break;
            }
            case Op::kLogMatmulActions: {
                const Tensor& m = nodes_[n.a].value;
                const Tensor& t = nodes_[n.b].value;
                int K = m.cols;
                std::vector<double> terms(K);
                for (int bi = 0; bi < m.rows; ++bi) {
                    int base = n.indices[bi] * K;
                    for (int l = 0; l < K; ++l) {
                        for (int k = 0; k < K; ++k) terms[k] = m.at(bi, k) + t.at(base + k, l);
                        n.value.at(bi, l) = log_sum_exp(terms);
                    }
                }
                break;
            }
        }
    }

    template <typename F>
    void ew(Node& n, F f) {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        for (int i = 0; i < a.size(); ++i) n.value.data[i] = f(a.data[i], b.data[i]);
    }

    template <typename F>
    void un(Node& n, F f) {
        const Tensor& a = nodes_[n.a].value;
        for (int i = 0; i < a.size(); ++i) n.value.data[i] = f(a.data[i]);
    }

    void run_backward() {
        for (int vi = static_cast<int>(nodes_.size()) - 1; vi >= 0; --vi) {
            Node& n = nodes_[vi];
            const Tensor& g = n.adjoint;
            switch (n.op) {
                case Op::kInput:
                    break;
                case Op::kParam:
                    for (int i = 0; i < g.size(); ++i) n.param->grad.data[i] += g.data[i];
                    break;
                case Op::kAffine: {
                    const Tensor& x = nodes_[n.a].value;
                    const Tensor& w = nodes_[n.b].value;
                    Tensor& dx = nodes_[n.a].adjoint;
                    Tensor& dw = nodes_[n.b].adjoint;
                    Tensor& db = nodes_[n.c].adjoint;
                    for (int i = 0; i < g.rows; ++i) {
                        const double* gi = &g.data[static_cast<std::size_t>(i) * g.cols];
                        for (int j = 0; j < g.cols; ++j) db.data[j] += gi[j];
                        const double* xi = &x.data[static_cast<std::size_t>(i) * x.cols];
                        for (int k = 0; k < x.cols; ++k) {
                            const double* wk = &w.data[static_cast<std::size_t>(k) * w.cols];
                            double acc = 0.0;
                            for (int j = 0; j < g.cols; ++j) acc += gi[j] * wk[j];
                            dx.at(i, k) += acc;
                            double xv = xi[k];
                            if (xv != 0.0) {
                                double* dwk = &dw.data[static_cast<std::size_t>(k) * dw.cols];
                                for (int j = 0; j < g.cols; ++j) dwk[j] += xv * gi[j];
                            }
                        }
                    }
                    break;
                }
                case Op::kAdd:
                    acc_into(n.a, g, 1.0);
                    acc_into(n.b, g, 1.0);
                    break;
                case Op::kSub:
                    acc_into(n.a, g, 1.0);
                    acc_into(n.b, g, -1.0);
                    break;
                case Op::kMul: {
                    const Tensor& a = nodes_[n.a].value;
                    const Tensor& b = nodes_[n.b].value;
                    Tensor& da = nodes_[n.a].adjoint;
                    Tensor& db = nodes_[n.b].adjoint;
                    for (int i = 0; i < g.size(); ++i) {
                        da.data[i] += g.data[i] * b.data[i];
                        db.data[i] += g.data[i] * a.data[i];
                    }
                    break;
                }
                case Op::kDiv: {
                    const Tensor& a = nodes_[n.a].value;
                    const Tensor& b = nodes_[n.b].value;
                    Tensor& da = nodes_[n.a].adjoint;
                    Tensor& db = nodes_[n.b].adjoint;
                    for (int i = 0; i < g.size(); ++i) {
                        da.data[i] += g.data[i] / b.data[i];
                        db.data[i] -= g.data[i] * a.data[i] / (b.data[i] * b.data[i]);
                    }
                    break;
                }
                case Op::kAddRowVec: {
                    Tensor& dm = nodes_[n.a].adjoint;
                    Tensor& dr = nodes_[n.b].adjoint;
                    for (int i = 0; i < g.rows; ++i) {
                        for (int j = 0; j < g.cols; ++j) {
                            dm.at(i, j) += g.at(i, j);
                            dr.data[j] += g.at(i, j);
                        }
                    }
                    break;
                }
                case Op::kSubColVec: {
                    Tensor& dm = nodes_[n.a].adjoint;
                    Tensor& dc = nodes_[n.b].adjoint;
                    for (int i = 0; i < g.rows; ++i) {
                        for (int j = 0; j < g.cols; ++j) {
                            dm.at(i, j) += g.at(i, j);
                            dc.data[i] -= g.at(i, j);
                        }
                    }
                    break;
                }
                case Op::kTanh: {
                    const Tensor& y = n.value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
                    break;
                }
                case Op::kExp: {
                    const Tensor& y = n.value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * y.data[i];
                    break;
                }
                case Op::kLog: {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.size(); ++i) da.data[i] += g.data[i] / x.data[i];
                    break;
                }
                case Op::kSoftplus: {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * sigmoid(x.data[i]);
                    break;
                }
                case Op::kSqrt: {
                    const Tensor& y = n.value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * 0.5 / y.data[i];
                    break;
                }
                case Op::kSquare: {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * 2.0 * x.data[i];
                    break;
                }
                case Op::kScale:
                    acc_into(n.a, g, n.scalar);
                    break;
                case Op::kAddConst:
                    acc_into(n.a, g, 1.0);
                    break;
                case Op::kRowSum: {
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < da.rows; ++i) {
                        for (int j = 0; j < da.cols; ++j) da.at(i, j) += g.data[i];
                    }
                    break;
                }
                case Op::kSumAll: {
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < da.size(); ++i) da.data[i] += g.data[0];
                    break;
                }
                case Op::kLogSumExpRows: {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < x.rows; ++i) {
                        for (int j = 0; j < x.cols; ++j) {
                            da.at(i, j) += g.data[i] * std::exp(x.at(i, j) - n.value.data[i]);
                        }
                    }
                    break;
                }
                case Op::kGatherCols: {
                    Tensor& da = nodes_[n.a].adjoint;
                    for (int i = 0; i < g.rows; ++i) da.at(i, n.indices[i]) += g.data[i];
                    break;
                }
                case Op::kGaussLogDensity: {
                    const Tensor& z = nodes_[n.a].value;
                    const Tensor& mu = nodes_[n.b].value;
                    const Tensor& var = nodes_[n.c].value;
                    Tensor& dz = nodes_[n.a].adjoint;
                    Tensor& dmu = nodes_[n.b].adjoint;
                    Tensor& dvar = nodes_[n.c].adjoint;
                    int d = z.cols;
                    for (int bi = 0; bi < z.rows; ++bi) {
                        for (int k = 0; k < mu.rows; ++k) {
                            double gk = g.at(bi, k);
                            if (gk == 0.0) continue;
                            for (int i = 0; i < d; ++i) {
                                double v = var.at(k, i);
                                double diff = z.at(bi, i) - mu.at(k, i);
                                double dd = -gk * diff / v;
                                dz.at(bi, i) += dd;
                                dmu.at(k, i) -= dd;
                                dvar.at(k, i) += gk * 0.5 * (diff * diff / (v * v) - 1.0 / v);
                            }
                        }
                    }
                    break;
                }
                case Op::kLogMatmulActions: {
                    const Tensor& m = nodes_[n.a].value;
                    const Tensor& t = nodes_[n.b].value;
                    Tensor& dm = nodes_[n.a].adjoint;
                    Tensor& dt = nodes_[n.b].adjoint;
                    int K = m.cols;
                    for (int bi = 0; bi < m.rows; ++bi) {
                        int base = n.indices[bi] * K;
                        for (int l = 0; l < K; ++l) {
                            double gl = g.at(bi, l);
                            if (gl == 0.0) continue;
                            double u = n.value.at(bi, l);
                            for (int k = 0; k < K; ++k) {
                                double w = std::exp(m.at(bi, k) + t.at(base + k, l) - u);
                                dm.at(bi, k) += gl * w;
                                dt.at(base + k, l) += gl * w;
                            }
                        }
                    }
                    break;
                }
            }
        }
    }

    void acc_into(Var v, const Tensor& g, double factor) {
        Tensor& d = nodes_[v].adjoint;
        for (int i = 0; i < g.size(); ++i) d.data[i] += factor * g.data[i];
    }
};

}  // namespace vibsim::nn
