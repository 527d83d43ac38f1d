#pragma once

// Intervention operators, the renewal calendar and the book of paid-but-not-yet
// matured renewal orders.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "forest/model.hpp"

namespace forest {

// ---------------------------------------------------------------------------
// Jump operators
// ---------------------------------------------------------------------------

/// Sell `a` units: (x + (p - c1) a - c2, r - a, p, q).
inline State harvest_op(const State& z, double a, const ModelParams& params) {
    if (!(a >= 0.0 && a <= z.r))
        throw std::invalid_argument("harvest_op: amount " + std::to_string(a) + " outside [0, " +
                                    std::to_string(z.r) + "]");
    return {z.x + (z.p - params.c1) * a - params.c2, z.r - a, z.p, z.q};
}

/// Pay for a renewal order of `e` units and receive the natural renewal g0.
inline State renew_op(const State& z, double e, const ModelParams& params) {
    if (!(e >= 0.0 && e <= params.K))
        throw std::invalid_argument("renew_op: order " + std::to_string(e) + " outside [0, K]");
    return {z.x - (z.q + params.c3) * e, z.r + params.g0, z.p, z.q};
}

/// An order of `e_old` units placed m dates ago becomes harvestable.
inline State mature_op(const State& z, double e_old, const ModelParams& params) {
    if (!(e_old >= 0.0 && e_old <= params.K))
        throw std::invalid_argument("mature_op: order " + std::to_string(e_old) + " outside [0, K]");
    return {z.x, z.r + params.growth(e_old), z.p, z.q};
}

// ---------------------------------------------------------------------------
// Renewal calendar
// ---------------------------------------------------------------------------

/// Inclusive range of date indices; empty when first > last.
struct IndexRange {
    int first = 1;
    int last = 0;

    bool empty() const noexcept { return first > last; }
    int size() const noexcept { return empty() ? 0 : last - first + 1; }
    bool operator==(const IndexRange&) const = default;
};

class Schedule {
public:
    Schedule(double T, int n_dates, int m_delay) : T_(T), n_(n_dates), m_(m_delay) {
        if (!(T > 0.0) || n_dates < 1 || m_delay < 0 || m_delay > n_dates)
            throw std::invalid_argument("Schedule: need T > 0, n_dates >= 1, 0 <= m_delay <= n_dates");
    }
    explicit Schedule(const ModelParams& params) : Schedule(params.T, params.n_dates, params.m_delay) {}

    double horizon() const noexcept { return T_; }
    int n_dates() const noexcept { return n_; }
    int m_delay() const noexcept { return m_; }
    double spacing() const noexcept { return T_ / n_; }
    double delta() const noexcept { return m_ * spacing(); }

    /// t_i = i T / n.
    double date(int i) const noexcept { return i * spacing(); }

    /// N(t) = #{i in 1..n : t_i <= t}; right-continuous.
    int date_count(double t) const noexcept {
        if (t < 0.0) return 0;
        const double scaled = t / spacing();
        const int n = static_cast<int>(std::floor(scaled + 1e-9 * std::max(1.0, scaled)));
        return std::clamp(n, 0, n_);
    }

    /// Dates whose orders are pending at t: N(t - delta) + 1 .. N(t).
    IndexRange pending_window(double t) const noexcept {
        return {date_count(t - delta()) + 1, date_count(t)};
    }

    /// Orders paid at date k mature at date k + m.
    bool matures_at(int k) const noexcept { return k > m_; }

    /// Number of pending orders carried through the open interval (t_k, t_{k+1}).
    int pending_count(int interval) const noexcept { return m_ == 0 ? 0 : std::min(interval, m_); }

private:
    double T_;
    int n_;
    int m_;
};

// ---------------------------------------------------------------------------
// Pending orders
// ---------------------------------------------------------------------------

struct PendingEntry {
    int date = 0;
    double quantity = 0.0;
    bool operator==(const PendingEntry&) const = default;
};

/// Fixed-capacity ring of m_delay slots; the order placed at date i lives in
/// slot (i - 1) mod m_delay until it matures at date i + m_delay.
class PendingOrders {
public:
    PendingOrders(int m_delay, double K) : slots_(static_cast<std::size_t>(std::max(m_delay, 0))), K_(K) {}

    int capacity() const noexcept { return static_cast<int>(slots_.size()); }

    int size() const noexcept {
        return static_cast<int>(std::count_if(slots_.begin(), slots_.end(), [](const auto& s) { return s.date > 0; }));
    }
    bool empty() const noexcept { return size() == 0; }

    void place(int date, double quantity) {
        if (slots_.empty()) throw std::logic_error("PendingOrders: no delay, nothing to hold");
        if (date < 1) throw std::invalid_argument("PendingOrders: date index must be >= 1");
        if (!(quantity >= 0.0 && quantity <= K_))
            throw std::invalid_argument("PendingOrders: quantity " + std::to_string(quantity) + " outside [0, K]");
        auto& slot = slots_[static_cast<std::size_t>(date - 1) % slots_.size()];
        if (slot.date > 0) throw std::logic_error("PendingOrders: slot for date " + std::to_string(date) + " occupied");
        if (!empty() && (date <= newest_date() || date - oldest_date() >= capacity()))
            throw std::logic_error("PendingOrders: date " + std::to_string(date) + " breaks the pending window");
        slot = {date, quantity};
    }

    /// Removes and returns the order placed at `date`, if it is pending.
    std::optional<double> take(int date) {
        if (slots_.empty() || date < 1) return std::nullopt;
        auto& slot = slots_[static_cast<std::size_t>(date - 1) % slots_.size()];
        if (slot.date != date) return std::nullopt;
        const double q = slot.quantity;
        slot = {};
        return q;
    }

    std::optional<double> quantity(int date) const {
        if (slots_.empty() || date < 1) return std::nullopt;
        const auto& slot = slots_[static_cast<std::size_t>(date - 1) % slots_.size()];
        if (slot.date != date) return std::nullopt;
        return slot.quantity;
    }

    /// Entries ordered by date, oldest first.
    std::vector<PendingEntry> entries() const {
        std::vector<PendingEntry> out;
        for (const auto& s : slots_)
            if (s.date > 0) out.push_back(s);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
        return out;
    }

private:
    int oldest_date() const {
        int d = 0;
        for (const auto& s : slots_)
            if (s.date > 0 && (d == 0 || s.date < d)) d = s.date;
        return d;
    }
    int newest_date() const {
        int d = 0;
        for (const auto& s : slots_) d = std::max(d, s.date);
        return d;
    }

    std::vector<PendingEntry> slots_;
    double K_;
};

/// State change at renewal date k when `e_new` units are ordered: the order
/// placed at date k - m (if k > m) matures first, then the new order is paid
/// and g0 arrives. With no delay the new order matures on the spot.
inline State apply_date(const State& z, int k, PendingOrders& pending, double e_new, const Schedule& schedule,
                        const ModelParams& params) {
    const int m = schedule.m_delay();
    if (m == 0) return renew_op(mature_op(z, e_new, params), e_new, params);
    State out = z;
    if (schedule.matures_at(k)) out = mature_op(out, pending.take(k - m).value_or(0.0), params);
    out = renew_op(out, e_new, params);
    pending.place(k, e_new);
    return out;
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

struct HarvestOrder {
    double time = 0.0;
    double amount = 0.0;
    bool operator==(const HarvestOrder&) const = default;
};

struct Strategy {
    std::vector<double> renewals;  // xi_i for dates 1..n (index i - 1)
    std::vector<HarvestOrder> harvests;
    bool operator==(const Strategy&) const = default;
};

inline double harvest_net_payoff(double p, double a, const ModelParams& params) noexcept {
    return (p - params.c1) * a - params.c2;
}

/// Keeps only the harvests that do not lose money at the prevailing price.
template <typename PriceAt>
Strategy profitable_filter(const Strategy& strategy, PriceAt&& price_at, const ModelParams& params) {
    Strategy out;
    out.renewals = strategy.renewals;
    for (const auto& h : strategy.harvests)
        if (harvest_net_payoff(price_at(h.time), h.amount, params) >= 0.0) out.harvests.push_back(h);
    return out;
}

}  // namespace forest
