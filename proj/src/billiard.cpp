#include "zdmix/billiard.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace zdmix {

namespace {

const double kPi = 3.14159265358979323846;

double reduce_unit(double x) {
    double r = x - std::floor(x);
    return r >= 1.0 ? 0.0 : r;
}

double square_distance_to_cell(Vec2 c) {
    double dx = std::max({0.0 - c.x, 0.0, c.x - 1.0});
    double dy = std::max({0.0 - c.y, 0.0, c.y - 1.0});
    return dx * dx + dy * dy;
}

}  // namespace

BilliardTable BilliardTable::make(std::vector<Disk> disks, long long flight_cap) {
    if (disks.empty()) throw TableError("table needs at least one obstacle");
    if (flight_cap < 1) throw TableError("flight_cap must be positive");
    BilliardTable t;
    for (Disk& d : disks) {
        if (!(d.radius > 0)) throw TableError("obstacle radius must be positive");
        if (d.radius >= 0.5) throw TableError("obstacle radius " + std::to_string(d.radius) + " is not below 1/2");
        d.center = {reduce_unit(d.center.x), reduce_unit(d.center.y)};
    }
    for (std::size_t i = 0; i < disks.size(); ++i)
        for (std::size_t j = i; j < disks.size(); ++j)
            for (int ox = -1; ox <= 1; ++ox)
                for (int oy = -1; oy <= 1; ++oy) {
                    if (i == j && ox == 0 && oy == 0) continue;
                    Vec2 d = disks[j].center + Vec2{double(ox), double(oy)} - disks[i].center;
                    double gap = std::sqrt(dot(d, d)) - disks[i].radius - disks[j].radius;
                    if (gap <= 0) {
                        std::ostringstream os;
                        os << "obstacles " << i << " and " << j << " overlap (distance short by " << -gap << ")";
                        throw TableError(os.str());
                    }
                }
    t.disks_ = std::move(disks);
    t.flight_cap_ = flight_cap;
    for (const Disk& d : t.disks_) t.perimeter_ += 2 * kPi * d.radius;
    for (std::size_t j = 0; j < t.disks_.size(); ++j)
        for (int ox = -1; ox <= 1; ++ox)
            for (int oy = -1; oy <= 1; ++oy) {
                Vec2 c = t.disks_[j].center + Vec2{double(ox), double(oy)};
                double r = t.disks_[j].radius;
                if (square_distance_to_cell(c) < r * r)
                    t.candidates_.push_back({static_cast<int>(j), ox, oy, c, r * r});
            }
    return t;
}

BilliardTable BilliardTable::from_config(const Config& cfg) {
    auto centers = cfg.get_all("obstacle.center");
    auto radii = cfg.get_all("obstacle.radius");
    if (centers.empty()) throw ConfigError(cfg.origin() + ": table needs at least one obstacle.center");
    if (centers.size() != radii.size())
        throw ConfigError(cfg.origin() + ": obstacle.center and obstacle.radius counts differ");
    std::vector<Disk> disks;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        auto c = parse_number_list(centers[i]);
        auto r = parse_number_list(radii[i]);
        if (c.size() != 2 || r.size() != 1) throw ConfigError(cfg.origin() + ": malformed obstacle " + std::to_string(i));
        disks.push_back({{c[0], c[1]}, r[0]});
    }
    return make(std::move(disks), cfg.get_int_or("flight_cap", 1000000));
}

double BilliardTable::min_radius() const {
    double r = disks_[0].radius;
    for (const Disk& d : disks_) r = std::min(r, d.radius);
    return r;
}

std::string BilliardTable::describe() const {
    std::ostringstream os;
    os.precision(17);
    for (const Disk& d : disks_) os << "disk " << d.center.x << " " << d.center.y << " " << d.radius << "\n";
    os << "flight_cap " << flight_cap_ << "\n";
    return os.str();
}

std::uint64_t BilliardTable::hash() const { return fnv1a(describe()); }

BilliardTable finite_horizon_table() { return BilliardTable::make({{{0.0, 0.0}, 0.4}, {{0.5, 0.5}, 0.2}}); }
BilliardTable infinite_horizon_table() { return BilliardTable::make({{{0.0, 0.0}, 0.3}}); }

HorizonInfo classify_horizon(const BilliardTable& table) {
    HorizonInfo info;
    const double wmax = 1.0 / (2.0 * table.min_radius());
    const int amax = static_cast<int>(std::floor(wmax + 1e-12));
    for (int a = 0; a <= amax; ++a)
        for (int b = -amax; b <= amax; ++b) {
            if (a == 0 && b != 1) continue;
            if (std::gcd(a, std::abs(b)) != 1) continue;
            const double norm = std::hypot(double(a), double(b));
            if (norm > wmax + 1e-12) continue;
            const double period = 1.0 / norm;
            const Vec2 u{-b / norm, a / norm};
            struct Interval {
                double lo, hi;
                int id;
            };
            std::vector<Interval> iv;
            bool closed = false;
            for (int j = 0; j < table.obstacles(); ++j) {
                const Disk& d = table.disks()[static_cast<std::size_t>(j)];
                if (2 * d.radius >= period) closed = true;
                double p = std::fmod(dot(d.center, u) - d.radius, period);
                if (p < 0) p += period;
                iv.push_back({p, p + 2 * d.radius, j});
            }
            if (closed) continue;
            std::sort(iv.begin(), iv.end(), [](const Interval& x, const Interval& y) { return x.lo < y.lo; });
            // sweep once around the circle of length period
            std::vector<std::pair<double, double>> gaps;
            double reach = iv[0].hi;
            for (std::size_t k = 1; k < iv.size(); ++k) {
                if (iv[k].lo > reach) gaps.push_back({reach, iv[k].lo});
                reach = std::max(reach, iv[k].hi);
            }
            if (iv[0].lo + period > reach) gaps.push_back({reach, iv[0].lo + period});
            for (const auto& [g0, g1] : gaps) {
                if (g1 - g0 <= 1e-12) continue;
                Corridor c;
                c.w = {a, b};
                c.width = g1 - g0;
                c.lines[0].offset = std::fmod(g0, period);
                c.lines[1].offset = std::fmod(g1, period);
                auto same = [&](double x, double y) {
                    double d = std::fmod(std::abs(x - y), period);
                    return std::min(d, period - d) < 1e-9;
                };
                for (const Interval& x : iv) {
                    if (same(x.hi, g0)) c.lines[0].tangent_ids.push_back(x.id);
                    if (same(x.lo, g1)) c.lines[1].tangent_ids.push_back(x.id);
                }
                info.corridors.push_back(c);
            }
        }
    info.finite = info.corridors.empty();
    return info;
}

FastState to_fast(const PhaseState& s) {
    FastState f;
    f.obstacle = s.obstacle;
    f.n = {std::cos(s.theta), std::sin(s.theta)};
    const double c = std::cos(s.phi), sn = std::sin(s.phi);
    f.v = {c * f.n.x - sn * f.n.y, sn * f.n.x + c * f.n.y};
    return f;
}

PhaseState to_phase(const FastState& f, Step cell) {
    PhaseState s;
    s.obstacle = f.obstacle;
    s.theta = std::atan2(f.n.y, f.n.x);
    if (s.theta < 0) s.theta += 2 * kPi;
    s.phi = std::atan2(cross(f.n, f.v), dot(f.n, f.v));
    s.cell = cell;
    return s;
}

Step advance(const BilliardTable& table, FastState& s, double* flight_length) {
    const Disk& here = table.disks()[static_cast<std::size_t>(s.obstacle)];
    const Vec2 p = here.center + here.radius * s.n;
    const Vec2 v = s.v;
    long long cx = static_cast<long long>(std::floor(p.x));
    long long cy = static_cast<long long>(std::floor(p.y));
    const int sx = v.x > 0 ? 1 : -1, sy = v.y > 0 ? 1 : -1;
    const double inf = std::numeric_limits<double>::infinity();
    const double dx = v.x != 0 ? 1.0 / std::abs(v.x) : inf;
    const double dy = v.y != 0 ? 1.0 / std::abs(v.y) : inf;
    double tx = v.x != 0 ? (v.x > 0 ? double(cx) + 1.0 - p.x : p.x - double(cx)) * dx : inf;
    double ty = v.y != 0 ? (v.y > 0 ? double(cy) + 1.0 - p.y : p.y - double(cy)) * dy : inf;
    const auto& cand = table.cell_candidates();
    double best = inf;
    int best_id = -1;
    long long bx = 0, by = 0;
    Vec2 best_center;
    const long long cap = table.flight_cap();
    for (long long visited = 0;; ++visited) {
        if (visited > cap) throw FlightError("unbounded flight: more than " + std::to_string(cap) + " cells");
        for (const auto& c : cand) {
            const long long mx = cx + c.ox, my = cy + c.oy;
            if (c.id == s.obstacle && mx == 0 && my == 0) continue;
            const Vec2 center{c.center.x + double(cx) - p.x, c.center.y + double(cy) - p.y};
            const double b = dot(center, v);
            if (b <= 0) continue;
            // perpendicular miss distance from the cross product keeps long flights accurate
            const double miss = cross(center, v);
            const double disc = c.r2 - miss * miss;
            if (disc < 0) continue;
            const double t = b - std::sqrt(disc);
            if (t > 1e-12 && t < best) {
                best = t;
                best_id = c.id;
                bx = mx;
                by = my;
                best_center = center;
            }
        }
        const double exit = std::min(tx, ty);
        if (best <= exit) break;
        if (tx < ty) {
            cx += sx;
            tx += dx;
        } else {
            cy += sy;
            ty += dy;
        }
    }
    const Disk& there = table.disks()[static_cast<std::size_t>(best_id)];
    Vec2 n = (1.0 / there.radius) * (best * v - best_center);
    const double nn = std::sqrt(dot(n, n));
    n = (1.0 / nn) * n;  // re-project onto the circle
    Vec2 w = v - (2.0 * dot(v, n)) * n;
    const double ww = std::sqrt(dot(w, w));
    s.obstacle = best_id;
    s.n = n;
    s.v = (1.0 / ww) * w;
    if (flight_length) *flight_length = best;
    return Step{static_cast<int>(bx), static_cast<int>(by)};
}

Collision next_collision(const BilliardTable& table, const PhaseState& s) {
    FastState f = to_fast(s);
    Collision c;
    c.kappa = advance(table, f, &c.flight_length);
    c.state = to_phase(f, Step{s.cell[0] + c.kappa[0], s.cell[1] + c.kappa[1]});
    return c;
}

OrbitRecord orbit(const BilliardTable& table, const PhaseState& s, int n, bool trace) {
    if (n < 0) throw std::invalid_argument("orbit length must be non-negative");
    OrbitRecord r;
    r.initial = s;
    r.steps = n;
    FastState f = to_fast(s);
    Step cell = s.cell;
    if (trace) r.cells.push_back(cell);
    for (int k = 0; k < n; ++k) {
        double len = 0;
        Step kap = advance(table, f, &len);
        cell = {cell[0] + kap[0], cell[1] + kap[1]};
        r.displacement = {r.displacement[0] + kap[0], r.displacement[1] + kap[1]};
        if (trace) {
            r.kappas.push_back(kap);
            r.cells.push_back(cell);
            r.flight_lengths.push_back(len);
        }
    }
    r.final_state = n == 0 ? s : to_phase(f, cell);
    return r;
}

PhaseState time_reverse(const PhaseState& s) {
    PhaseState r = s;
    r.phi = -s.phi;
    return r;
}

FastState time_reverse(const FastState& s) {
    FastState r = s;
    r.v = (2.0 * dot(s.v, s.n)) * s.n - s.v;
    return r;
}

Tensor sigma_infinity(const BilliardTable& table) {
    HorizonInfo h = classify_horizon(table);
    if (h.finite) throw TableError("sigma_infinity needs an infinite-horizon table");
    Tensor s(2, 2);
    for (const Corridor& c : h.corridors) {
        const double norm = std::hypot(double(c.w[0]), double(c.w[1]));
        Tensor ww(2, 2);
        ww[0] = c.w[0] * c.w[0];
        ww[1] = ww[2] = c.w[0] * c.w[1];
        ww[3] = c.w[1] * c.w[1];
        for (const CorridorLine& line : c.lines) {
            // a tangent point is fixed by the map only when it is the single obstacle on its line
            if (line.tangent_ids.size() != 1) continue;
            const double weight = 2.0 * c.width * c.width / (2.0 * norm * table.perimeter_total());
            s += weight * ww;
        }
    }
    return s;
}

void write_trace_cache(const std::string& path, std::uint64_t config_hash, std::uint64_t seed,
                       const std::vector<std::vector<Step>>& traces) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trace cache " + path);
    const std::uint64_t n = traces.empty() ? 0 : traces[0].size();
    const std::uint64_t count = traces.size();
    out.write("ZDTRACE1", 8);
    for (std::uint64_t x : {config_hash, seed, n, count}) out.write(reinterpret_cast<const char*>(&x), 8);
    std::vector<std::int8_t> buf;
    for (const auto& t : traces) {
        if (t.size() != n) throw std::invalid_argument("trace cache needs equal-length traces");
        buf.clear();
        for (const Step& k : t) {
            for (int c = 0; c < 2; ++c) {
                if (k[c] < -128 || k[c] > 127) throw std::out_of_range("kappa component does not fit in 8 bits");
                buf.push_back(static_cast<std::int8_t>(k[c]));
            }
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
}

TraceCache read_trace_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read trace cache " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "ZDTRACE1", 8) != 0) throw std::runtime_error(path + " is not a trace cache");
    std::uint64_t hdr[4];
    in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
    TraceCache c;
    c.config_hash = hdr[0];
    c.seed = hdr[1];
    std::vector<std::int8_t> buf(2 * hdr[2]);
    for (std::uint64_t i = 0; i < hdr[3]; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw std::runtime_error(path + ": truncated trace cache");
        std::vector<Step> t(hdr[2]);
        for (std::uint64_t k = 0; k < hdr[2]; ++k) t[k] = {buf[2 * k], buf[2 * k + 1]};
        c.traces.push_back(std::move(t));
    }
    return c;
}

void write_trace_csv(const std::string& path, const std::vector<OrbitRecord>& orbits) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "orbit,step,kappa_x,kappa_y,cell_x,cell_y,flight\n";
    out.precision(17);
    for (std::size_t i = 0; i < orbits.size(); ++i) {
        const OrbitRecord& r = orbits[i];
        for (std::size_t k = 0; k < r.kappas.size(); ++k)
            out << i << "," << k << "," << r.kappas[k][0] << "," << r.kappas[k][1] << "," << r.cells[k + 1][0] << ","
                << r.cells[k + 1][1] << "," << r.flight_lengths[k] << "\n";
    }
}

}  // namespace zdmix
