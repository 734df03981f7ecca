#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "zdmix/config.hpp"

namespace zdmix {

using Step = std::array<int, 2>;

/// One way of leaving a state: go to `to` with probability `prob`, moving the cell by `step`.
struct Branch {
    int to = 0;
    double prob = 0.0;
    Step step{0, 0};
};

/** \brief Finite-state Markov chain with integer steps: a Z^d-extension with a finite base.
 *
 * The base is the stationary chain of branches; kappa of a base point is the step
 * of the branch taken from X_0. Observables u, v are functions of the state X_0.
 * A state-labelled step table is the special case where all branches out of a
 * state carry the same step.
 */
class MarkovModel {
public:
    static constexpr int kMaxStates = 64;

    static MarkovModel from_branches(int dim, std::vector<std::vector<Branch>> out, std::string name = "model");
    static MarkovModel from_state_steps(int dim, const Eigen::MatrixXd& transition, const std::vector<Step>& steps,
                                        std::string name = "model");
    static MarkovModel from_config(const Config& cfg);

    int dim() const { return dim_; }
    int size() const { return static_cast<int>(out_.size()); }
    const std::string& name() const { return name_; }
    const std::vector<std::vector<Branch>>& branches() const { return out_; }
    const Eigen::MatrixXd& transition() const { return transition_; }
    const Eigen::VectorXd& stationary() const { return stationary_; }
    /// (I - P + 1 pi)^{-1}
    const Eigen::MatrixXd& fundamental() const { return fundamental_; }

    /// K_c(a,b) = sum over branches a->b of prob * step_c.
    Eigen::MatrixXd step_matrix(int c) const;
    /// sum over branches a->b of prob * step_c * step_e.
    Eigen::MatrixXd step_matrix(int c, int e) const;
    /// Expected step from each state, component c.
    Eigen::VectorXd mean_step(int c) const;

    int max_step() const;
    std::array<int, 2> step_min() const;
    std::array<int, 2> step_max() const;

    /// Chain on branches: state = branch (a -> b, step); its step is the branch step.
    /// lifted_source[i] / lifted_target[i] give a and b for lifted state i.
    MarkovModel line_graph(std::vector<int>* lifted_source = nullptr, std::vector<int>* lifted_target = nullptr,
                           std::vector<Step>* lifted_step = nullptr) const;

    /// Checks the reversal symmetry numerically through the odd Taylor coefficients of lambda.
    bool even() const { return even_; }

    std::string describe() const;

private:
    void validate_and_prepare();

    int dim_ = 2;
    std::string name_;
    std::vector<std::vector<Branch>> out_;
    Eigen::MatrixXd transition_;
    Eigen::VectorXd stationary_;
    Eigen::MatrixXd fundamental_;
    bool even_ = false;
};

/// Lazy nearest-neighbour walk: one state, steps {0, +-e1, +-e2} each with probability 1/5.
MarkovModel model_w5();
/// Two states drifting +1 / -1 on Z with persistence; second eigenvalue 1/2.
MarkovModel model_two_state_1d();
/// Planar two-state chain: drift +-e1 with vertical jitter; second eigenvalue 1/2.
MarkovModel model_two_state_2d();
/// Three-state planar chain without reversal symmetry (lambda not even).
MarkovModel model_skew_2d();
/// Look up one of the built-in models by name (w5, two-state-1d, two-state-2d, skew-2d).
MarkovModel builtin_model(const std::string& name);

/// True when the integer vectors generate all of Z^k (k = columns).
bool generates_full_lattice(const std::vector<std::vector<long long>>& gens, int k);

}  // namespace zdmix
