#pragma once

// Register machine over a concatenated prompt matrix A_cat = [A_append, A_input].
//
// Registers are named rectangular regions of A_cat. Instructions read and
// write whole registers:
//
//   MUL dst a b          dst ← a · b        (a 1x1 operand scales the other)
//   DIV dst a d          dst ← a / d        (d is 1x1)
//   AFF dst a b W1 W2    dst ← W1 a + W2 b
//   TRANSPOSE dst a      dst ← aᵀ
//   MAP dst a            length-n a → n x n² block regressor; length-n² a → n x n (row-major)
//
// An operand may carry a view shape (`h3:1x4`) that reorients a vector
// register; otherwise the register's declared shape is used. All shape
// checking happens in validate(), before any instruction runs.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kficl/common.hpp"
#include "kficl/context_codec.hpp"

namespace kficl {

/// Invalid program or failed instruction; carries the instruction index.
class ProgramError : public std::runtime_error {
public:
    ProgramError(std::size_t index, const std::string& what)
        : std::runtime_error("instruction " + std::to_string(index) + ": " + what), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

inline constexpr double kMinDivisor = 1e-14;

// =============================================================================
// Layout
// =============================================================================

enum class TapeMode { kf, dual_kf };

inline std::string to_string(TapeMode mode) { return mode == TapeMode::kf ? "kf" : "dual"; }

struct Region {
    int row = 0;
    int col = 0;
    int rows = 0;
    int cols = 0;

    int size() const { return rows * cols; }
    bool is_vector() const { return rows == 1 || cols == 1; }
    bool overlaps(const Region& o) const {
        return row < o.row + o.rows && o.row < row + rows && col < o.col + o.cols &&
               o.col < col + cols;
    }
};

struct Layout {
    TapeMode mode = TapeMode::kf;
    int n = 0;
    int N = 0;
    int rows = 0;
    int cols = 0;
    int append_cols = 0;
    int input_rows = 0;
    int input_cols = 0;
    std::vector<std::string> order;  ///< registers in allocation order
    std::map<std::string, Region> registers;

    bool contains(const std::string& name) const { return registers.count(name) != 0; }

    const Region& at(const std::string& name) const {
        auto it = registers.find(name);
        if (it == registers.end()) throw ConfigError("layout has no register '" + name + "'");
        return it->second;
    }

    void add(const std::string& name, Region r) {
        registers[name] = r;
        order.push_back(name);
    }

    /// One line per register: name, row, col, rows, cols.
    std::string table() const {
        std::ostringstream os;
        os << "# layout mode=" << to_string(mode) << " n=" << n << " N=" << N << " tape=" << rows
           << "x" << cols << " append_cols=" << append_cols << "\n";
        os << "# name row col rows cols\n";
        for (const auto& name : order) {
            const Region& r = registers.at(name);
            os << name << ' ' << r.row << ' ' << r.col << ' ' << r.rows << ' ' << r.cols << '\n';
        }
        return os.str();
    }
};

/// Register table for (n, N, mode).
///
/// A_append occupies columns [0, append_cols); each buffer gets its own
/// column block starting at row 0, in the order
///   kf:   B1 B2 B3 B4 B5 B6 B7 B8 B9
///   dual: the kf buffers, then F B10 B11 B12 B13 B14 fnext B15 B16 B17.
/// A_input sits to the right at rows [0, n+1). Input registers follow the
/// context layout: F, Q, sigma and, per step i, h<i>, y<i> and x<i> (the
/// state slot sharing y_i's column below row 0). x0 is the zero column under σ².
inline Layout make_layout(int n, int N, TapeMode mode) {
    if (n < 1 || N < 1) throw ConfigError("make_layout: n and N must be positive");
    Layout L;
    L.mode = mode;
    L.n = n;
    L.N = N;
    const int nn = n * n;

    int col = 0;
    auto buffer = [&](const std::string& name, int rows, int cols) {
        L.add(name, Region{0, col, rows, cols});
        col += cols;
    };
    buffer("B1", n, n);
    buffer("B2", n, n);
    buffer("B3", 1, n);
    buffer("B4", n, 1);
    buffer("B5", 1, 1);
    buffer("B6", 1, 1);
    buffer("B7", 1, 1);
    buffer("B8", n, 1);
    buffer("B9", n, n);
    if (mode == TapeMode::dual_kf) {
        buffer("F", n, n);
        buffer("B10", n, nn);
        buffer("B11", 1, nn);
        buffer("B12", nn, nn);
        buffer("B13", nn, 1);
        buffer("B14", nn, nn);
        buffer("fnext", nn, 1);
        buffer("B15", 1, n);
        buffer("B16", 1, 1);
        buffer("B17", nn, 1);
    }
    L.append_cols = col;

    const Scheme scheme = mode == TapeMode::kf ? Scheme::scalar : Scheme::scalar_no_params;
    const ContextShape shape = context_shape(scheme, n, 1, N);
    L.input_rows = shape.rows;
    L.input_cols = shape.cols;
    const int w = L.append_cols;
    if (mode == TapeMode::kf) {
        L.add("F", Region{1, w, n, n});
        L.add("Q", Region{1, w + n, n, n});
        L.add("sigma", Region{0, w + 2 * n, 1, 1});
        L.add("x0", Region{1, w + 2 * n, n, 1});
    } else {
        L.add("Q", Region{1, w, n, n});
        L.add("sigma", Region{0, w + n, 1, 1});
        L.add("x0", Region{1, w + n, n, 1});
    }
    for (int i = 1; i <= N; ++i) {
        const std::string k = std::to_string(i);
        L.add("h" + k, Region{1, w + shape.h_col(i), n, 1});
        L.add("y" + k, Region{0, w + shape.y_col(i), 1, 1});
        L.add("x" + k, Region{1, w + shape.y_col(i), n, 1});
    }
    L.rows = std::max(shape.rows, mode == TapeMode::dual_kf ? nn : n);
    L.cols = w + shape.cols;
    return L;
}

// =============================================================================
// Tape
// =============================================================================

struct Operand {
    std::string reg;
    int rows = -1;  ///< view shape; -1 uses the register's declared shape
    int cols = -1;

    Operand() = default;
    Operand(std::string name) : reg(std::move(name)) {}  // NOLINT(google-explicit-constructor)
    Operand(const char* name) : reg(name) {}             // NOLINT(google-explicit-constructor)
    Operand(std::string name, int r, int c) : reg(std::move(name)), rows(r), cols(c) {}

    bool has_view() const { return rows >= 0; }

    std::string str() const {
        return has_view() ? reg + ":" + shape_str(rows, cols) : reg;
    }
};

struct Tape {
    Matrix data;
    Layout layout;

    /// Shape an operand presents. Throws ConfigError for unknown registers or
    /// an incompatible view.
    std::pair<int, int> view_shape(const Operand& op) const {
        const Region& r = layout.at(op.reg);
        if (!op.has_view()) return {r.rows, r.cols};
        const bool same = op.rows == r.rows && op.cols == r.cols;
        const bool reoriented = r.is_vector() && (op.rows == 1 || op.cols == 1) &&
                                op.rows * op.cols == r.size();
        if (!same && !reoriented) {
            throw ConfigError("view " + op.str() + " does not fit register of shape " +
                              shape_str(r.rows, r.cols));
        }
        return {op.rows, op.cols};
    }

    Matrix read(const Operand& op) const {
        const Region& r = layout.at(op.reg);
        Matrix block = data.block(r.row, r.col, r.rows, r.cols);
        const auto [rows, cols] = view_shape(op);
        if (rows == r.rows && cols == r.cols) return block;
        return block.transpose();  // vector reorientation
    }

    void write(const Operand& op, const Matrix& value) {
        const Region& r = layout.at(op.reg);
        const auto [rows, cols] = view_shape(op);
        if (value.rows() != rows || value.cols() != cols) {
            throw ConfigError("write of " + shape_str(value) + " into " + op.str() + " (" +
                              shape_str(rows, cols) + ")");
        }
        if (rows == r.rows && cols == r.cols) {
            data.block(r.row, r.col, r.rows, r.cols) = value;
        } else {
            data.block(r.row, r.col, r.rows, r.cols) = value.transpose();
        }
    }
};

struct TapeOptions {
    /// Dual mode: starting transition estimate (identity when unset).
    std::optional<Matrix> initial_F;
};

/// Places the context at the right of a fresh A_append. B1 starts at I_n; in
/// dual mode F and fnext start at the initial transition estimate and B12 at
/// I_{n²}; every other buffer is zero.
inline Tape build_tape(const ContextMatrix& ctx, TapeMode mode, const TapeOptions& opts = {}) {
    const Scheme expected = mode == TapeMode::kf ? Scheme::scalar : Scheme::scalar_no_params;
    if (ctx.scheme != expected) {
        throw ConfigError("build_tape: " + to_string(mode) + " mode needs a " + to_string(expected) +
                          " context, got " + to_string(ctx.scheme));
    }
    if (ctx.m != 1) throw ConfigError("build_tape: scalar measurements required");
    const ContextShape shape = context_shape(ctx.scheme, ctx.n, ctx.m, ctx.N);
    if (ctx.data.rows() != shape.rows || ctx.data.cols() != shape.cols) {
        throw ConfigError("build_tape: malformed context of shape " + shape_str(ctx.data));
    }
    Tape tape;
    tape.layout = make_layout(ctx.n, ctx.N, mode);
    const int n = ctx.n;
    tape.data = Matrix::Zero(tape.layout.rows, tape.layout.cols);
    tape.data.block(0, tape.layout.append_cols, ctx.data.rows(), ctx.data.cols()) = ctx.data;
    tape.write("B1", Matrix::Identity(n, n));
    if (mode == TapeMode::dual_kf) {
        const Matrix F0 = opts.initial_F.value_or(Matrix::Identity(n, n));
        if (F0.rows() != n || F0.cols() != n) throw ConfigError("build_tape: initial F is " + shape_str(F0));
        tape.write("F", F0);
        tape.write("fnext", vec_row_major(F0));
        tape.write("B12", Matrix::Identity(n * n, n * n));
    } else if (opts.initial_F) {
        throw ConfigError("build_tape: initial_F applies to dual mode only");
    }
    return tape;
}

// =============================================================================
// Instructions and programs
// =============================================================================

enum class Opcode { mul, div, aff, transpose, map };

inline std::string to_string(Opcode op) {
    switch (op) {
        case Opcode::mul: return "MUL";
        case Opcode::div: return "DIV";
        case Opcode::aff: return "AFF";
        case Opcode::transpose: return "TRANSPOSE";
        case Opcode::map: return "MAP";
    }
    return "?";
}

/// AFF weight: either c·I sized to the destination, or an explicit matrix.
struct Weight {
    double scale = 1.0;
    std::optional<Matrix> dense;

    static Weight identity(double c = 1.0) { return Weight{c, std::nullopt}; }
    static Weight matrix(Matrix w) { return Weight{1.0, std::move(w)}; }

    int rows(int dst_rows) const { return dense ? static_cast<int>(dense->rows()) : dst_rows; }
    int cols(int src_rows) const { return dense ? static_cast<int>(dense->cols()) : src_rows; }

    Matrix apply(const Matrix& x) const { return dense ? Matrix(*dense * x) : Matrix(scale * x); }
};

struct Instruction {
    Opcode op = Opcode::mul;
    Operand dst;
    Operand a;
    std::optional<Operand> b;  ///< MUL/AFF second source, DIV divisor
    Weight w1;
    Weight w2;
};

inline Instruction MUL(Operand dst, Operand a, Operand b) {
    return {Opcode::mul, std::move(dst), std::move(a), std::move(b), {}, {}};
}
inline Instruction DIV(Operand dst, Operand a, Operand divisor) {
    return {Opcode::div, std::move(dst), std::move(a), std::move(divisor), {}, {}};
}
inline Instruction AFF(Operand dst, Operand a, Operand b, Weight w1, Weight w2) {
    return {Opcode::aff, std::move(dst), std::move(a), std::move(b), std::move(w1), std::move(w2)};
}
inline Instruction TRANSPOSE(Operand dst, Operand a) {
    return {Opcode::transpose, std::move(dst), std::move(a), std::nullopt, {}, {}};
}
inline Instruction MAP(Operand dst, Operand a) {
    return {Opcode::map, std::move(dst), std::move(a), std::nullopt, {}, {}};
}

struct Program {
    TapeMode mode = TapeMode::kf;
    int n = 0;
    int N = 0;
    bool trace = false;
    std::vector<Instruction> code;
    /// step_end[i-1] is one past the last instruction of step i.
    std::vector<std::size_t> step_end;
    /// Index of the instruction that writes h_i x̂⁻_i (the one-step prediction).
    std::vector<std::size_t> prediction_at;

    std::size_t size() const { return code.size(); }
};

/// Static shape check of every instruction against a layout.
inline void validate(const Program& program, const Layout& layout) {
    Tape probe;
    probe.layout = layout;  // view_shape only consults the layout
    const int n = layout.n;
    for (std::size_t k = 0; k < program.code.size(); ++k) {
        const Instruction& ins = program.code[k];
        try {
            const auto dst = probe.view_shape(ins.dst);
            const auto a = probe.view_shape(ins.a);
            std::pair<int, int> b{0, 0};
            if (ins.op == Opcode::mul || ins.op == Opcode::div || ins.op == Opcode::aff) {
                if (!ins.b) throw ConfigError(to_string(ins.op) + " needs two sources");
                b = probe.view_shape(*ins.b);
            }
            std::pair<int, int> expect;
            switch (ins.op) {
                case Opcode::mul:
                    if (a.second == b.first) {
                        expect = {a.first, b.second};
                    } else if (a.first == 1 && a.second == 1) {
                        expect = b;
                    } else if (b.first == 1 && b.second == 1) {
                        expect = a;
                    } else {
                        throw ConfigError("MUL operands " + shape_str(a.first, a.second) + " and " +
                                          shape_str(b.first, b.second) + " do not compose");
                    }
                    break;
                case Opcode::div:
                    if (b.first != 1 || b.second != 1) throw ConfigError("DIV divisor must be 1x1");
                    expect = a;
                    break;
                case Opcode::aff: {
                    const int r1 = ins.w1.rows(dst.first), c1 = ins.w1.cols(a.first);
                    const int r2 = ins.w2.rows(dst.first), c2 = ins.w2.cols(b.first);
                    if (c1 != a.first || c2 != b.first || r1 != dst.first || r2 != dst.first ||
                        a.second != dst.second || b.second != dst.second ||
                        (!ins.w1.dense && a.first != dst.first) ||
                        (!ins.w2.dense && b.first != dst.first)) {
                        throw ConfigError("AFF weights do not conform to " +
                                          shape_str(a.first, a.second) + ", " +
                                          shape_str(b.first, b.second) + " -> " +
                                          shape_str(dst.first, dst.second));
                    }
                    expect = dst;
                    break;
                }
                case Opcode::transpose:
                    expect = {a.second, a.first};
                    break;
                case Opcode::map: {
                    const int len = a.first * a.second;
                    if (a.first != 1 && a.second != 1) throw ConfigError("MAP source must be a vector");
                    if (len == n && dst == std::pair<int, int>{n, n * n}) {
                        expect = dst;
                    } else if (len == n * n && dst == std::pair<int, int>{n, n}) {
                        expect = dst;
                    } else {
                        throw ConfigError("MAP source of length " + std::to_string(len) +
                                          " cannot fill " + shape_str(dst.first, dst.second));
                    }
                    break;
                }
            }
            if (expect != dst) {
                throw ConfigError(to_string(ins.op) + " produces " +
                                  shape_str(expect.first, expect.second) + " but " + ins.dst.str() +
                                  " is " + shape_str(dst.first, dst.second));
            }
        } catch (const ConfigError& e) {
            throw ProgramError(k, e.what());
        }
    }
}

/// Executes one (already validated) instruction.
inline void execute(Tape& tape, const Instruction& ins, std::size_t index = 0) {
    switch (ins.op) {
        case Opcode::mul: {
            const Matrix a = tape.read(ins.a);
            const Matrix b = tape.read(*ins.b);
            Matrix out;
            if (a.cols() == b.rows()) {
                out = a * b;
            } else if (a.size() == 1) {
                out = a(0, 0) * b;
            } else {
                out = b(0, 0) * a;
            }
            tape.write(ins.dst, out);
            break;
        }
        case Opcode::div: {
            const double d = tape.read(*ins.b)(0, 0);
            if (!(std::abs(d) > kMinDivisor)) {
                std::ostringstream msg;
                msg << "DIV by near-zero scalar " << d << " at " << ins.b->str();
                throw ProgramError(index, msg.str());
            }
            tape.write(ins.dst, tape.read(ins.a) / d);
            break;
        }
        case Opcode::aff:
            tape.write(ins.dst, ins.w1.apply(tape.read(ins.a)) + ins.w2.apply(tape.read(*ins.b)));
            break;
        case Opcode::transpose:
            tape.write(ins.dst, tape.read(ins.a).transpose());
            break;
        case Opcode::map: {
            const Matrix a = tape.read(ins.a);
            const Vector v = a.reshaped();
            const int n = tape.layout.n;
            if (tape.view_shape(ins.dst).second == n * n && v.size() == n) {
                Matrix X = Matrix::Zero(n, n * n);
                for (int i = 0; i < n; ++i) X.block(i, i * n, 1, n) = v.transpose();
                tape.write(ins.dst, X);
            } else {
                tape.write(ins.dst, unvec_row_major(v, n, n));
            }
            break;
        }
    }
}

struct TraceEntry {
    std::size_t index = 0;
    int step = 0;
    std::string reg;
    Matrix value;
};

/// Validates, then applies every instruction in order. When `trace` is given
/// the destination register is recorded after each write.
inline void run_program(Tape& tape, const Program& program, std::vector<TraceEntry>* trace = nullptr) {
    validate(program, tape.layout);
    int step = program.step_end.empty() ? 0 : 1;
    for (std::size_t k = 0; k < program.code.size(); ++k) {
        while (step > 0 && step <= static_cast<int>(program.step_end.size()) &&
               k >= program.step_end[static_cast<std::size_t>(step - 1)]) {
            ++step;
        }
        const Instruction& ins = program.code[k];
        execute(tape, ins, k);
        if (trace) trace->push_back({k, step, ins.dst.reg, tape.read(ins.dst.reg)});
    }
}

/// Validates and runs a single instruction.
inline void run_instruction(Tape& tape, const Instruction& ins) {
    Program p;
    p.n = tape.layout.n;
    p.code.push_back(ins);
    run_program(tape, p);
}

inline void exec_mul(Tape& t, Operand a, Operand b, Operand dst) {
    run_instruction(t, MUL(std::move(dst), std::move(a), std::move(b)));
}
inline void exec_div(Tape& t, Operand a, Operand divisor, Operand dst) {
    run_instruction(t, DIV(std::move(dst), std::move(a), std::move(divisor)));
}
inline void exec_aff(Tape& t, Operand a, Operand b, Operand dst, Weight w1, Weight w2) {
    run_instruction(t, AFF(std::move(dst), std::move(a), std::move(b), std::move(w1), std::move(w2)));
}
inline void exec_transpose(Tape& t, Operand a, Operand dst) {
    run_instruction(t, TRANSPOSE(std::move(dst), std::move(a)));
}
inline void exec_map(Tape& t, Operand a, Operand dst) {
    run_instruction(t, MAP(std::move(dst), std::move(a)));
}

// =============================================================================
// Filter programs
// =============================================================================

namespace detail {

/// Prediction and scalar update of the state filter for step i.
inline void emit_state_step(Program& p, int i) {
    const int n = p.n;
    const std::string cur = "x" + std::to_string(i - 1);
    const std::string next = "x" + std::to_string(i);
    const std::string h = "h" + std::to_string(i);
    const std::string y = "y" + std::to_string(i);
    auto& c = p.code;
    c.push_back(TRANSPOSE("B2", "F"));
    c.push_back(MUL(next, "F", cur));                                  // x̂⁻ = F x̂⁺
    c.push_back(MUL("B1", "F", "B1"));
    c.push_back(MUL("B1", "B1", "B2"));                                // F P Fᵀ
    c.push_back(AFF("B1", "B1", "Q", Weight::identity(), Weight::identity()));
    c.push_back(TRANSPOSE("B3", h));
    c.push_back(MUL("B4", "B1", h));                                   // P hᵀ
    c.push_back(MUL("B5", "B3", "B4"));                                // h P hᵀ
    c.push_back(AFF("B6", "B5", "sigma", Weight::identity(), Weight::identity()));
    c.push_back(DIV("B4", "B4", "B6"));                                // gain
    p.prediction_at.push_back(c.size());
    c.push_back(MUL("B7", Operand(h, 1, n), next));                    // h x̂⁻
    c.push_back(AFF("B7", y, "B7", Weight::identity(), Weight::identity(-1.0)));
    c.push_back(MUL("B8", "B7", "B4"));
    c.push_back(AFF(next, next, "B8", Weight::identity(), Weight::identity()));
    c.push_back(MUL("B9", "B4", "B3"));
    c.push_back(MUL("B9", "B9", "B1"));
    c.push_back(AFF("B1", "B1", "B9", Weight::identity(), Weight::identity(-1.0)));
}

/// Transition-matrix update for step i; the regressor is built from x̂⁺_{i-1}.
inline void emit_transition_step(Program& p, int i) {
    const std::string cur = "x" + std::to_string(i - 1);
    const std::string h = "h" + std::to_string(i);
    auto& c = p.code;
    c.push_back(MAP("B10", cur));                                      // X
    c.push_back(MUL("B11", "B3", "B10"));                              // H_f = h X
    c.push_back(TRANSPOSE("B13", "B11"));
    c.push_back(MUL("B11", "B11", "B12"));                             // H_f P_f
    c.push_back(MUL("B5", "B11", "B13"));                              // H_f P_f H_fᵀ
    c.push_back(MUL("B13", "B12", "B13"));                             // P_f H_fᵀ
    c.push_back(MUL("B15", "B3", "Q"));
    c.push_back(MUL("B16", "B15", h));                                 // h Q hᵀ
    c.push_back(AFF("B16", "B16", "sigma", Weight::identity(), Weight::identity()));
    c.push_back(AFF("B6", "B5", "B16", Weight::identity(), Weight::identity()));
    c.push_back(DIV("B13", "B13", "B6"));                              // K_f
    c.push_back(MUL("B17", "B7", "B13"));
    c.push_back(AFF("fnext", "fnext", "B17", Weight::identity(), Weight::identity()));
    c.push_back(MUL("B11", "B3", "B10"));
    c.push_back(MUL("B14", "B13", "B11"));
    c.push_back(MUL("B14", "B14", "B12"));
    c.push_back(AFF("B12", "B12", "B14", Weight::identity(), Weight::identity(-1.0)));
    c.push_back(MAP("F", "fnext"));
}

}  // namespace detail

/// Kalman filter over a scalar context: predict, then scalar-gain update, per
/// step. Afterwards x<i> holds x̂⁺_i and B1 holds P⁺_N.
inline Program compile_kf_program(int n, int N) {
    if (n < 1 || N < 1) throw ConfigError("compile_kf_program: n and N must be positive");
    Program p;
    p.mode = TapeMode::kf;
    p.n = n;
    p.N = N;
    for (int i = 1; i <= N; ++i) {
        detail::emit_state_step(p, i);
        p.step_end.push_back(p.code.size());
    }
    return p;
}

struct DualProgramOptions {
    /// When false the transition estimate stays at its initial value.
    bool transition_update = true;
};

/// Dual Kalman filter over an F-less scalar context. After step i, F holds
/// unvec(f̂_i), fnext holds f̂_i and B12 holds its covariance.
inline Program compile_dual_kf_program(int n, int N, DualProgramOptions opts = {}) {
    if (n < 1 || N < 1) throw ConfigError("compile_dual_kf_program: n and N must be positive");
    Program p;
    p.mode = TapeMode::dual_kf;
    p.n = n;
    p.N = N;
    for (int i = 1; i <= N; ++i) {
        detail::emit_state_step(p, i);
        if (opts.transition_update) detail::emit_transition_step(p, i);
        p.step_end.push_back(p.code.size());
    }
    return p;
}

// =============================================================================
// Text assembly
// =============================================================================

namespace detail {

inline std::string weight_literal(const Weight& w) {
    std::ostringstream os;
    os.precision(17);
    if (!w.dense) {
        os << w.scale;
        return os.str();
    }
    os << '[';
    for (Eigen::Index i = 0; i < w.dense->rows(); ++i) {
        if (i) os << ';';
        for (Eigen::Index j = 0; j < w.dense->cols(); ++j) {
            if (j) os << ',';
            os << (*w.dense)(i, j);
        }
    }
    os << ']';
    return os.str();
}

inline Weight parse_weight(const std::string& tok, std::size_t line) {
    auto number = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ProgramError(line, "bad weight literal '" + tok + "'");
        }
    };
    if (tok.empty() || tok.front() != '[') return Weight::identity(number(tok));
    if (tok.back() != ']') throw ProgramError(line, "unterminated weight literal '" + tok + "'");
    std::vector<std::vector<double>> rows;
    std::stringstream body(tok.substr(1, tok.size() - 2));
    std::string row;
    while (std::getline(body, row, ';')) {
        std::vector<double> vals;
        std::stringstream rs(row);
        std::string cell;
        while (std::getline(rs, cell, ',')) vals.push_back(number(cell));
        if (!rows.empty() && vals.size() != rows.front().size()) {
            throw ProgramError(line, "ragged weight literal '" + tok + "'");
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty() || rows.front().empty()) throw ProgramError(line, "empty weight literal");
    Matrix w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return Weight::matrix(std::move(w));
}

inline Operand parse_operand(const std::string& tok, std::size_t line) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) return Operand(tok);
    const std::string shape = tok.substr(colon + 1);
    const auto x = shape.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(shape);
        return Operand(tok.substr(0, colon), std::stoi(shape.substr(0, x)), std::stoi(shape.substr(x + 1)));
    } catch (const std::exception&) {
        throw ProgramError(line, "bad operand '" + tok + "'");
    }
}

}  // namespace detail

/// One instruction per line (`OPCODE dst src1 [src2] [W1] [W2]`), preceded by
/// a header comment and a `# step i` marker before each step.
inline std::string to_assembly(const Program& p) {
    std::ostringstream os;
    os << "# kficl-asm mode=" << to_string(p.mode) << " n=" << p.n << " N=" << p.N << "\n";
    std::size_t marked = 0;
    for (std::size_t k = 0; k < p.code.size(); ++k) {
        while (marked < p.step_end.size() && k == (marked == 0 ? 0 : p.step_end[marked - 1])) {
            os << "# step " << ++marked << "\n";
        }
        const Instruction& ins = p.code[k];
        os << to_string(ins.op) << ' ' << ins.dst.str() << ' ' << ins.a.str();
        if (ins.b) os << ' ' << ins.b->str();
        if (ins.op == Opcode::aff) {
            os << ' ' << detail::weight_literal(ins.w1) << ' ' << detail::weight_literal(ins.w2);
        }
        os << '\n';
    }
    return os.str();
}

/// Inverse of to_assembly. Step markers rebuild step boundaries; prediction
/// indices are recovered as the first write of B7 within each step.
inline Program parse_assembly(std::string_view text) {
    Program p;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    bool saw_step = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;
        if (tok == "#") {
            std::string what;
            ls >> what;
            if (what == "kficl-asm") {
                std::string kv;
                while (ls >> kv) {
                    const auto eq = kv.find('=');
                    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
                    if (key == "mode") p.mode = val == "dual" ? TapeMode::dual_kf : TapeMode::kf;
                    if (key == "n") p.n = std::stoi(val);
                    if (key == "N") p.N = std::stoi(val);
                }
            } else if (what == "step") {
                if (saw_step) p.step_end.push_back(p.code.size());
                saw_step = true;
            }
            continue;
        }
        std::vector<std::string> args;
        std::string arg;
        while (ls >> arg) args.push_back(arg);
        const std::size_t idx = p.code.size();
        auto need = [&](std::size_t count) {
            if (args.size() != count) {
                throw ProgramError(idx, tok + " expects " + std::to_string(count) + " operands on line " +
                                            std::to_string(lineno));
            }
        };
        Instruction ins;
        if (tok == "MUL" || tok == "DIV") {
            need(3);
            ins = tok == "MUL" ? MUL(detail::parse_operand(args[0], idx), detail::parse_operand(args[1], idx),
                                     detail::parse_operand(args[2], idx))
                               : DIV(detail::parse_operand(args[0], idx), detail::parse_operand(args[1], idx),
                                     detail::parse_operand(args[2], idx));
        } else if (tok == "AFF") {
            need(5);
            ins = AFF(detail::parse_operand(args[0], idx), detail::parse_operand(args[1], idx),
                      detail::parse_operand(args[2], idx), detail::parse_weight(args[3], idx),
                      detail::parse_weight(args[4], idx));
        } else if (tok == "TRANSPOSE" || tok == "MAP") {
            need(2);
            ins = tok == "MAP" ? MAP(detail::parse_operand(args[0], idx), detail::parse_operand(args[1], idx))
                               : TRANSPOSE(detail::parse_operand(args[0], idx),
                                           detail::parse_operand(args[1], idx));
        } else {
            throw ProgramError(idx, "unknown opcode '" + tok + "' on line " + std::to_string(lineno));
        }
        p.code.push_back(std::move(ins));
    }
    if (saw_step) p.step_end.push_back(p.code.size());
    std::size_t begin = 0;
    for (std::size_t end : p.step_end) {
        for (std::size_t k = begin; k < end; ++k) {
            if (p.code[k].op == Opcode::mul && p.code[k].dst.reg == "B7") {
                p.prediction_at.push_back(k);
                break;
            }
        }
        begin = end;
    }
    return p;
}

// =============================================================================
// Running filter programs end to end
// =============================================================================

struct VmRun {
    Tape tape;
    std::vector<Vector> x_post;   ///< x̂⁺_1..x̂⁺_N read from the x<i> registers
    std::vector<Matrix> P_post;   ///< B1 after each step
    std::vector<double> y_pred;   ///< h_i x̂⁻_i
    std::vector<Matrix> F_hat;    ///< dual mode: F after each step
    std::vector<TraceEntry> trace;
};

/// Runs `program` on `tape`, collecting per-step snapshots from the trace.
inline VmRun run_filter_program(Tape tape, const Program& program, bool keep_trace = false) {
    std::vector<TraceEntry> trace;
    run_program(tape, program, &trace);
    VmRun out;
    const auto steps = program.step_end.size();
    out.P_post.resize(steps);
    out.y_pred.resize(program.prediction_at.size());
    if (program.mode == TapeMode::dual_kf) out.F_hat.resize(steps);
    for (const auto& e : trace) {
        if (e.step < 1) continue;
        const auto s = static_cast<std::size_t>(e.step - 1);
        if (e.reg == "B1") out.P_post[s] = e.value;
        if (e.reg == "F" && program.mode == TapeMode::dual_kf) out.F_hat[s] = e.value;
    }
    for (std::size_t i = 0; i < program.prediction_at.size(); ++i) {
        out.y_pred[i] = trace[program.prediction_at[i]].value(0, 0);
    }
    if (program.mode == TapeMode::dual_kf) {
        // Without a transition update F keeps its initial value.
        for (std::size_t s = 0; s < steps; ++s) {
            if (out.F_hat[s].size() == 0) out.F_hat[s] = tape.read("F");
        }
    }
    for (std::size_t i = 1; i <= steps; ++i) out.x_post.push_back(tape.read("x" + std::to_string(i)));
    out.tape = std::move(tape);
    if (keep_trace) out.trace = std::move(trace);
    return out;
}

}  // namespace kficl
