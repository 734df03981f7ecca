#include "zdmix/observables.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

namespace zdmix {

BaseObservable BaseObservable::one() { return {}; }

BaseObservable BaseObservable::state_vector(Eigen::VectorXd v, std::string name) {
    BaseObservable b;
    b.kind = Kind::StateVector;
    b.values = std::move(v);
    b.name = std::move(name);
    return b;
}

BaseObservable BaseObservable::cos_phi() {
    BaseObservable b;
    b.kind = Kind::CosPhi;
    b.name = "cos_phi";
    return b;
}

BaseObservable BaseObservable::obstacle(int id) {
    BaseObservable b;
    b.kind = Kind::Obstacle;
    b.index = id;
    b.name = "obstacle" + std::to_string(id);
    return b;
}

BaseObservable BaseObservable::kappa(int component) {
    BaseObservable b;
    b.kind = Kind::KappaComponent;
    b.index = component;
    b.name = "kappa" + std::to_string(component);
    return b;
}

BaseObservable BaseObservable::centered_version() const {
    BaseObservable b = *this;
    b.centered = true;
    return b;
}

std::string BaseObservable::key() const {
    std::ostringstream os;
    os << static_cast<int>(kind) << ":" << index << ":" << centered << ":" << name;
    if (kind == Kind::StateVector) {
        os.precision(17);
        for (Eigen::Index i = 0; i < values.size(); ++i) os << "," << values(i);
    }
    return os.str();
}

CellObservable CellObservable::single(BaseObservable base, LatticeWeights h, std::string name) {
    CellObservable f;
    f.terms.push_back({std::move(base), std::move(h)});
    f.name = std::move(name);
    return f;
}

CellObservable CellObservable::cell_indicator(const Step& l) {
    std::string name = "1_C(" + std::to_string(l[0]) + "," + std::to_string(l[1]) + ")";
    return single(BaseObservable::one(), {{l, 1.0}}, name);
}

CellObservable& CellObservable::operator+=(const CellObservable& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    return *this;
}

CellObservable CellObservable::scaled(double s) const {
    CellObservable f = *this;
    for (auto& t : f.terms)
        for (auto& w : t.weights) w.second *= s;
    return f;
}

CellObservable operator-(const CellObservable& a, const CellObservable& b) {
    CellObservable f = a;
    f += b.scaled(-1.0);
    f.name = a.name + "-" + b.name;
    return f;
}

double weight_sum(const LatticeWeights& h) {
    double s = 0;
    for (const auto& [l, w] : h) s += w;
    return s;
}

Eigen::Vector2d weight_first_moment(const LatticeWeights& h) {
    Eigen::Vector2d s = Eigen::Vector2d::Zero();
    for (const auto& [l, w] : h) s += w * Eigen::Vector2d(l[0], l[1]);
    return s;
}

Eigen::Matrix2d weight_second_moment(const LatticeWeights& h) {
    Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
    for (const auto& [l, w] : h) {
        Eigen::Vector2d x(l[0], l[1]);
        s += w * x * x.transpose();
    }
    return s;
}

LiftedModel LiftedModel::of(const MarkovModel& base) {
    LiftedModel L{base.line_graph(nullptr, nullptr, nullptr), base.size(), {}, {}, {}};
    L.model = base.line_graph(&L.source, &L.target, &L.step);
    return L;
}

Eigen::VectorXd LiftedModel::pull_back(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(source.size()));
    for (std::size_t e = 0; e < source.size(); ++e) out(static_cast<Eigen::Index>(e)) = u(source[e]);
    return out;
}

CellObservable LiftedModel::lift(const CellObservable& f) const {
    CellObservable out = f;
    for (auto& t : out.terms) {
        if (t.base.kind == BaseObservable::Kind::One) continue;
        if (t.base.kind != BaseObservable::Kind::StateVector)
            throw std::invalid_argument("only state-vector observables can be lifted");
        t.base.values = pull_back(t.base.values);
    }
    return out;
}

CellObservable LiftedModel::compose_with_map(const CellObservable& base_f) const {
    const Eigen::Index n = static_cast<Eigen::Index>(source.size());
    std::map<Step, int> steps;
    for (const Step& s : step) steps.emplace(s, 0);
    CellObservable out;
    out.name = base_f.name + "oT";
    for (const CellTerm& t : base_f.terms) {
        Eigen::VectorXd f0;
        if (t.base.kind == BaseObservable::Kind::One) {
            f0 = Eigen::VectorXd::Ones(base_states);
        } else if (t.base.kind == BaseObservable::Kind::StateVector) {
            f0 = t.base.values;
        } else {
            throw std::invalid_argument("compose_with_map needs state-vector observables");
        }
        if (t.base.centered) throw std::invalid_argument("compose_with_map: pass uncentered observables");
        for (const auto& [s, unused] : steps) {
            Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
            for (Eigen::Index e = 0; e < n; ++e)
                if (step[static_cast<std::size_t>(e)] == s) b(e) = f0(target[static_cast<std::size_t>(e)]);
            LatticeWeights h;
            for (const auto& [l, w] : t.weights) h.push_back({Step{l[0] - s[0], l[1] - s[1]}, w});
            out.terms.push_back({BaseObservable::state_vector(b, t.base.name + "oT"), h});
        }
    }
    return out;
}

}  // namespace zdmix
