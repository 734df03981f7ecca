#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "zdmix/config.hpp"
#include "zdmix/markov.hpp"
#include "zdmix/tensor.hpp"

namespace zdmix {

struct Vec2 {
    double x = 0, y = 0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

struct Disk {
    Vec2 center;  ///< reduced to [0,1)^2
    double radius = 0;
};

struct CorridorLine {
    double offset = 0;             ///< position across the corridor direction, in [0, period)
    std::vector<int> tangent_ids;  ///< obstacles touching this line (one entry per period)
};

struct Corridor {
    Step w{0, 0};        ///< primitive direction
    double width = 0;    ///< lattice units
    CorridorLine lines[2];
};

struct FlightError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/** \brief Z^2-periodic array of disks, one copy of each obstacle per unit cell. */
class BilliardTable {
public:
    static BilliardTable make(std::vector<Disk> disks, long long flight_cap = 1000000);
    /// Keys: obstacle.center (repeated, "x, y"), obstacle.radius (repeated, same order), flight_cap.
    static BilliardTable from_config(const Config& cfg);

    const std::vector<Disk>& disks() const { return disks_; }
    int obstacles() const { return static_cast<int>(disks_.size()); }
    double perimeter_total() const { return perimeter_; }
    long long flight_cap() const { return flight_cap_; }
    double min_radius() const;
    /// Canonical description, the basis of hash().
    std::string describe() const;
    std::uint64_t hash() const;

    /// Disk copies (obstacle id, lattice offset) that meet the unit cell [0,1)^2.
    struct Candidate {
        int id;
        int ox, oy;
        Vec2 center;  ///< center of the copy relative to the cell corner
        double r2;
    };
    const std::vector<Candidate>& cell_candidates() const { return candidates_; }

private:
    std::vector<Disk> disks_;
    double perimeter_ = 0;
    long long flight_cap_ = 1000000;
    std::vector<Candidate> candidates_;
};

BilliardTable finite_horizon_table();    ///< disks (0,0) r=0.4 and (0.5,0.5) r=0.2
BilliardTable infinite_horizon_table();  ///< single disk (0,0) r=0.3

struct HorizonInfo {
    bool finite = true;
    std::vector<Corridor> corridors;
};

/// Corridors by projecting the obstacle cosets on w-perp for primitive |w| <= 1/(2 r_min).
HorizonInfo classify_horizon(const BilliardTable& table);

/** \brief Post-collision state: obstacle, boundary angle theta, angle phi from the outward normal, cell. */
struct PhaseState {
    int obstacle = 0;
    double theta = 0;
    double phi = 0;
    Step cell{0, 0};
};

/// Same state with the unit normal and velocity stored as vectors (hot loops use this form).
struct FastState {
    int obstacle = 0;
    Vec2 n;  ///< outward unit normal at the collision point
    Vec2 v;  ///< unit velocity after reflection, <n, v> >= 0
};

FastState to_fast(const PhaseState& s);
PhaseState to_phase(const FastState& s, Step cell);

/// One collision: moves s in place and returns the cell displacement kappa.
Step advance(const BilliardTable& table, FastState& s, double* flight_length = nullptr);

struct Collision {
    PhaseState state;
    Step kappa{0, 0};
    double flight_length = 0;
};

Collision next_collision(const BilliardTable& table, const PhaseState& s);

struct OrbitRecord {
    PhaseState initial;
    PhaseState final_state;
    int steps = 0;
    Step displacement{0, 0};
    std::vector<Step> kappas;          ///< filled when traced
    std::vector<Step> cells;           ///< I_0 .. I_n when traced
    std::vector<double> flight_lengths;
};

OrbitRecord orbit(const BilliardTable& table, const PhaseState& s, int n, bool trace = false);

/// Uniform double in [0,1) from a 64-bit generator output.
inline double unit_double(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

/** \brief Invariant-measure sample: obstacle by perimeter, theta uniform, sin phi uniform, cell 0. */
template <class Rng>
PhaseState sample_invariant(const BilliardTable& table, Rng& rng) {
    const double two_pi = 6.283185307179586476925;
    PhaseState s;
    double pick = unit_double(rng()) * table.perimeter_total();
    s.obstacle = table.obstacles() - 1;
    for (int i = 0; i < table.obstacles(); ++i) {
        double p = two_pi * table.disks()[static_cast<std::size_t>(i)].radius;
        if (pick < p) {
            s.obstacle = i;
            break;
        }
        pick -= p;
    }
    s.theta = two_pi * unit_double(rng());
    do {
        s.phi = std::asin(2.0 * unit_double(rng()) - 1.0);
    } while (std::abs(std::abs(s.phi) - 1.5707963267948966) < 1e-12);
    return s;
}

/// (q, v) -> (q, v reflected across the normal): phi -> -phi. An involution.
PhaseState time_reverse(const PhaseState& s);
FastState time_reverse(const FastState& s);

/// Corridor formula: each (corridor, bounding line with one tangent obstacle per period, orientation)
/// contributes d^2 / (2 |w| perimeter) w (x) w.
Tensor sigma_infinity(const BilliardTable& table);

/// Binary trace cache: header (magic, config hash, seed, n, count) then kappa as int8 pairs.
void write_trace_cache(const std::string& path, std::uint64_t config_hash, std::uint64_t seed,
                       const std::vector<std::vector<Step>>& traces);
struct TraceCache {
    std::uint64_t config_hash = 0, seed = 0;
    std::vector<std::vector<Step>> traces;
};
TraceCache read_trace_cache(const std::string& path);
void write_trace_csv(const std::string& path, const std::vector<OrbitRecord>& orbits);

}  // namespace zdmix
