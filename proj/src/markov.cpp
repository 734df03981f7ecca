#include "zdmix/markov.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "zdmix/spectral.hpp"

namespace zdmix {

bool generates_full_lattice(const std::vector<std::vector<long long>>& gens, int k) {
    std::vector<std::vector<long long>> rows;
    for (const auto& g : gens)
        if (std::any_of(g.begin(), g.end(), [](long long x) { return x != 0; })) rows.push_back(g);
    int pivot_row = 0;
    std::vector<long long> diag;
    for (int c = 0; c < k; ++c) {
        // Euclid on column c among rows >= pivot_row.
        while (true) {
            int best = -1;
            for (int r = pivot_row; r < static_cast<int>(rows.size()); ++r)
                if (rows[r][c] != 0 && (best < 0 || std::llabs(rows[r][c]) < std::llabs(rows[best][c]))) best = r;
            if (best < 0) return false;  // no pivot: rank deficient
            std::swap(rows[pivot_row], rows[best]);
            bool done = true;
            for (int r = pivot_row + 1; r < static_cast<int>(rows.size()); ++r) {
                if (rows[r][c] == 0) continue;
                long long q = rows[r][c] / rows[pivot_row][c];
                for (int j = 0; j < k; ++j) rows[r][j] -= q * rows[pivot_row][j];
                if (rows[r][c] != 0) done = false;
            }
            if (done) break;
        }
        diag.push_back(std::llabs(rows[pivot_row][c]));
        ++pivot_row;
    }
    // Index of the lattice is the product of the pivots.
    return std::all_of(diag.begin(), diag.end(), [](long long d) { return d == 1; });
}

MarkovModel MarkovModel::from_branches(int dim, std::vector<std::vector<Branch>> out, std::string name) {
    MarkovModel m;
    m.dim_ = dim;
    m.name_ = std::move(name);
    for (auto& row : out) {
        std::vector<Branch> kept;
        for (const Branch& b : row)
            if (b.prob > 0) kept.push_back(b);
        row = std::move(kept);
    }
    m.out_ = std::move(out);
    m.validate_and_prepare();
    return m;
}

MarkovModel MarkovModel::from_state_steps(int dim, const Eigen::MatrixXd& transition, const std::vector<Step>& steps,
                                          std::string name) {
    if (transition.rows() != transition.cols() || transition.rows() != static_cast<long>(steps.size()))
        throw std::invalid_argument("transition matrix and step table sizes differ");
    std::vector<std::vector<Branch>> out(steps.size());
    for (int a = 0; a < transition.rows(); ++a)
        for (int b = 0; b < transition.cols(); ++b)
            if (transition(a, b) != 0.0) out[a].push_back({b, transition(a, b), steps[a]});
    return from_branches(dim, std::move(out), std::move(name));
}

MarkovModel MarkovModel::from_config(const Config& cfg) {
    Config c = cfg.subtree("model");
    if (c.has("builtin")) return builtin_model(c.get("builtin"));
    const int dim = static_cast<int>(c.get_int_or("dim", 2));
    const std::string name = c.get_or("name", "model");
    if (dim != 1 && dim != 2) throw ConfigError("model.dim must be 1 or 2");
    auto read_step = [&](const std::vector<double>& v, std::size_t off, const std::string& what) {
        Step s{0, 0};
        for (int j = 0; j < dim; ++j) {
            double x = v.at(off + j);
            if (x != std::floor(x)) throw ConfigError(what + ": steps must be integers");
            s[j] = static_cast<int>(x);
        }
        return s;
    };
    if (c.has("branch")) {
        const int n = static_cast<int>(c.get_int("states"));
        std::vector<std::vector<Branch>> out(n);
        for (const std::string& line : c.get_all("branch")) {
            auto v = parse_number_list(line);
            if (static_cast<int>(v.size()) != 3 + dim)
                throw ConfigError("model.branch expects 'from to prob step...' with " + std::to_string(dim) +
                                  " step components: '" + line + "'");
            int a = static_cast<int>(v[0]), b = static_cast<int>(v[1]);
            if (a < 0 || a >= n || b < 0 || b >= n) throw ConfigError("model.branch state out of range: " + line);
            out[a].push_back({b, v[2], read_step(v, 3, "model.branch")});
        }
        return from_branches(dim, std::move(out), name);
    }
    auto rows = c.get_all("transition");
    auto steps = c.get_all("step");
    if (rows.empty()) throw ConfigError("model needs either model.branch lines or model.transition rows");
    if (rows.size() != steps.size()) throw ConfigError("model.transition and model.step counts differ");
    const int n = static_cast<int>(rows.size());
    Eigen::MatrixXd P(n, n);
    std::vector<Step> st;
    for (int a = 0; a < n; ++a) {
        auto r = parse_number_list(rows[a]);
        if (static_cast<int>(r.size()) != n) throw ConfigError("model.transition row has wrong length");
        for (int b = 0; b < n; ++b) P(a, b) = r[b];
        auto s = parse_number_list(steps[a]);
        if (static_cast<int>(s.size()) != dim) throw ConfigError("model.step has wrong length");
        st.push_back(read_step(s, 0, "model.step"));
    }
    return from_state_steps(dim, P, st, name);
}

void MarkovModel::validate_and_prepare() {
    const int n = size();
    if (n < 1 || n > kMaxStates) throw std::invalid_argument("model must have 1..64 states");
    if (dim_ != 1 && dim_ != 2) throw std::invalid_argument("model dimension must be 1 or 2");
    transition_ = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < n; ++a) {
        double total = 0;
        for (const Branch& b : out_[a]) {
            if (b.to < 0 || b.to >= n) throw std::invalid_argument("branch target out of range");
            if (dim_ == 1 && b.step[1] != 0) throw std::invalid_argument("one-dimensional model with a planar step");
            transition_(a, b.to) += b.prob;
            total += b.prob;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw std::invalid_argument("row " + std::to_string(a) + " of the transition sums to " +
                                        std::to_string(total));
    }
    // Strong connectivity.
    auto reach = [&](bool forward) {
        std::vector<char> seen(n, 0);
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        while (!q.empty()) {
            int a = q.front();
            q.pop();
            for (int b = 0; b < n; ++b) {
                double w = forward ? transition_(a, b) : transition_(b, a);
                if (w > 0 && !seen[b]) {
                    seen[b] = 1;
                    q.push(b);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    };
    if (!reach(true) || !reach(false)) throw std::invalid_argument("chain is not irreducible");

    // Stationary law.
    Eigen::MatrixXd A = transition_.transpose() - Eigen::MatrixXd::Identity(n, n);
    A.row(n - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    stationary_ = A.fullPivLu().solve(rhs);
    fundamental_ = (Eigen::MatrixXd::Identity(n, n) - transition_ +
                    Eigen::VectorXd::Ones(n) * stationary_.transpose())
                       .inverse();

    // Centering.
    for (int c = 0; c < dim_; ++c) {
        double m = stationary_.dot(mean_step(c));
        if (std::abs(m) > 1e-12)
            throw std::invalid_argument("steps are not centered: mean of component " + std::to_string(c) + " is " +
                                        std::to_string(m));
    }

    // Aperiodicity of chain and extension: closed-walk weights (step, length) must generate Z^{d+1}.
    std::vector<std::array<long long, 3>> pot(n);
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    while (!q.empty()) {
        int a = q.front();
        q.pop();
        for (const Branch& b : out_[a])
            if (!seen[b.to]) {
                seen[b.to] = 1;
                pot[b.to] = {pot[a][0] + b.step[0], pot[a][1] + b.step[1], pot[a][2] + 1};
                q.push(b.to);
            }
    }
    std::vector<std::vector<long long>> gens;
    for (int a = 0; a < n; ++a)
        for (const Branch& b : out_[a]) {
            std::vector<long long> g;
            for (int c = 0; c < dim_; ++c) g.push_back(pot[a][c] + b.step[c] - pot[b.to][c]);
            g.push_back(pot[a][2] + 1 - pot[b.to][2]);
            gens.push_back(g);
        }
    if (!generates_full_lattice(gens, dim_ + 1))
        throw std::invalid_argument("model '" + name_ +
                                    "' is periodic: closed-walk displacements do not generate the full lattice");

    even_ = lambda_is_even(*this);
}

Eigen::MatrixXd MarkovModel::step_matrix(int c) const {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(size(), size());
    for (int a = 0; a < size(); ++a)
        for (const Branch& b : out_[a]) K(a, b.to) += b.prob * b.step[c];
    return K;
}

Eigen::MatrixXd MarkovModel::step_matrix(int c, int e) const {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(size(), size());
    for (int a = 0; a < size(); ++a)
        for (const Branch& b : out_[a]) K(a, b.to) += b.prob * b.step[c] * b.step[e];
    return K;
}

Eigen::VectorXd MarkovModel::mean_step(int c) const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(size());
    for (int a = 0; a < size(); ++a)
        for (const Branch& b : out_[a]) m(a) += b.prob * b.step[c];
    return m;
}

int MarkovModel::max_step() const {
    int m = 0;
    for (const auto& row : out_)
        for (const Branch& b : row) m = std::max({m, std::abs(b.step[0]), std::abs(b.step[1])});
    return m;
}

std::array<int, 2> MarkovModel::step_min() const {
    std::array<int, 2> m{0, 0};
    for (const auto& row : out_)
        for (const Branch& b : row)
            for (int c = 0; c < 2; ++c) m[c] = std::min(m[c], b.step[c]);
    return m;
}

std::array<int, 2> MarkovModel::step_max() const {
    std::array<int, 2> m{0, 0};
    for (const auto& row : out_)
        for (const Branch& b : row)
            for (int c = 0; c < 2; ++c) m[c] = std::max(m[c], b.step[c]);
    return m;
}

MarkovModel MarkovModel::line_graph(std::vector<int>* src, std::vector<int>* dst, std::vector<Step>* steps) const {
    std::vector<std::pair<int, int>> id;  // (state, branch index)
    std::vector<std::vector<int>> first(size());
    for (int a = 0; a < size(); ++a)
        for (int j = 0; j < static_cast<int>(out_[a].size()); ++j) {
            first[a].push_back(static_cast<int>(id.size()));
            id.emplace_back(a, j);
        }
    if (static_cast<int>(id.size()) > kMaxStates) throw std::invalid_argument("line graph exceeds 64 states");
    std::vector<std::vector<Branch>> out(id.size());
    if (src) src->clear();
    if (dst) dst->clear();
    if (steps) steps->clear();
    for (std::size_t e = 0; e < id.size(); ++e) {
        const Branch& be = out_[id[e].first][id[e].second];
        for (int j = 0; j < static_cast<int>(out_[be.to].size()); ++j)
            out[e].push_back({first[be.to][j], out_[be.to][j].prob, be.step});
        if (src) src->push_back(id[e].first);
        if (dst) dst->push_back(be.to);
        if (steps) steps->push_back(be.step);
    }
    return from_branches(dim_, std::move(out), name_ + "-lifted");
}

std::string MarkovModel::describe() const {
    std::ostringstream os;
    os << "model " << name_ << ": d=" << dim_ << ", states=" << size() << ", even=" << (even_ ? "yes" : "no");
    return os.str();
}

MarkovModel model_w5() {
    std::vector<std::vector<Branch>> out(1);
    for (Step s : {Step{0, 0}, Step{1, 0}, Step{-1, 0}, Step{0, 1}, Step{0, -1}}) out[0].push_back({0, 0.2, s});
    return MarkovModel::from_branches(2, std::move(out), "w5");
}

MarkovModel model_two_state_1d() {
    std::vector<std::vector<Branch>> out(2);
    out[0] = {{0, 0.5, {1, 0}}, {0, 0.25, {0, 0}}, {1, 0.25, {0, 0}}};
    out[1] = {{1, 0.5, {-1, 0}}, {1, 0.25, {0, 0}}, {0, 0.25, {0, 0}}};
    return MarkovModel::from_branches(1, std::move(out), "two-state-1d");
}

MarkovModel model_two_state_2d() {
    std::vector<std::vector<Branch>> out(2);
    out[0] = {{0, 0.3, {1, 0}}, {0, 0.15, {0, 1}}, {0, 0.15, {0, -1}}, {0, 0.15, {0, 0}}, {1, 0.25, {0, 0}}};
    out[1] = {{1, 0.3, {-1, 0}}, {1, 0.15, {0, -1}}, {1, 0.15, {0, 1}}, {1, 0.15, {0, 0}}, {0, 0.25, {0, 0}}};
    return MarkovModel::from_branches(2, std::move(out), "two-state-2d");
}

MarkovModel model_skew_2d() {
    const Step s[3] = {{1, 0}, {0, 1}, {-1, -1}};
    std::vector<std::vector<Branch>> out(3);
    for (int a = 0; a < 3; ++a)
        out[a] = {{(a + 1) % 3, 0.5, s[a]}, {a, 0.25, {0, 0}}, {a, 0.25, {-s[a][0], -s[a][1]}}};
    return MarkovModel::from_branches(2, std::move(out), "skew-2d");
}

MarkovModel builtin_model(const std::string& name) {
    if (name == "w5") return model_w5();
    if (name == "two-state-1d") return model_two_state_1d();
    if (name == "two-state-2d") return model_two_state_2d();
    if (name == "skew-2d") return model_skew_2d();
    throw ConfigError("unknown built-in model '" + name + "'");
}

}  // namespace zdmix
