#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "zdmix/markov.hpp"

namespace zdmix {

/** \brief A function on the base (one cell).
 *
 * Markov providers understand One and StateVector; billiard providers understand
 * One, CosPhi, Obstacle and KappaComponent. A centered observable has its mean
 * subtracted and reports a mean of exactly 0.
 */
struct BaseObservable {
    enum class Kind { One, StateVector, CosPhi, Obstacle, KappaComponent };

    Kind kind = Kind::One;
    int index = 0;
    bool centered = false;
    Eigen::VectorXd values;
    std::string name = "1";

    static BaseObservable one();
    static BaseObservable state_vector(Eigen::VectorXd v, std::string name);
    static BaseObservable cos_phi();
    static BaseObservable obstacle(int id);
    static BaseObservable kappa(int component);

    BaseObservable centered_version() const;
    /// Stable text key (used for caching and reports).
    std::string key() const;
};

using LatticeWeights = std::vector<std::pair<Step, double>>;

struct CellTerm {
    BaseObservable base;
    LatticeWeights weights;  ///< h_l, finitely supported
};

/// f(q + l, v) = sum over terms of base(q, v) * h_l.
struct CellObservable {
    std::vector<CellTerm> terms;
    std::string name = "f";

    static CellObservable single(BaseObservable base, LatticeWeights h, std::string name = "f");
    /// Indicator of the cell C_l.
    static CellObservable cell_indicator(const Step& l);

    CellObservable& operator+=(const CellObservable& o);
    CellObservable scaled(double s) const;
};

CellObservable operator-(const CellObservable& a, const CellObservable& b);

double weight_sum(const LatticeWeights& h);
/// sum h_l l (rank 1) and sum h_l l (x) l (rank 2).
Eigen::Vector2d weight_first_moment(const LatticeWeights& h);
Eigen::Matrix2d weight_second_moment(const LatticeWeights& h);

/** \brief Chain on branches of a Markov model, for observables that depend on one step ahead. */
struct LiftedModel {
    MarkovModel model;
    int base_states = 0;
    std::vector<int> source, target;
    std::vector<Step> step;

    static LiftedModel of(const MarkovModel& base);

    /// u(X_0) written as a function of the lifted state.
    Eigen::VectorXd pull_back(const Eigen::VectorXd& u) const;
    /// Lift a state-vector cell observable to the branch chain.
    CellObservable lift(const CellObservable& f) const;
    /// f o T for a lifted cell observable f whose bases are lifts of state vectors:
    /// f(T(x, l)) = f0(target) h_{l + kappa}.
    CellObservable compose_with_map(const CellObservable& base_f) const;
};

}  // namespace zdmix
