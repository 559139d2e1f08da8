#pragma once

// Explicit finite models: Markov decision processes given by outcome lists,
// Markov chains given by stochastic matrices, and the exact computations on
// them (value iteration, communicating classes, Cesaro limits).

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace beamql
{
    struct MdpOutcome
    {
        int next = -1; // -1: the episode ends, no continuation value
        double prob = 0.0;
        double reward = 0.0;
    };

    struct MdpAction
    {
        int label = 0;        // caller-defined action identifier
        double sojourn = 1.0; // expected time spent in the state
        std::vector<MdpOutcome> outcomes;
    };

    struct FiniteMdp
    {
        std::vector<std::vector<MdpAction>> actions; // per state
        std::vector<std::pair<int, double>> restart; // where episodes start

        std::size_t num_states() const noexcept { return actions.size(); }
        std::size_t max_actions() const noexcept
        {
            std::size_t m = 0;
            for (const auto &a : actions)
                m = std::max(m, a.size());
            return m;
        }

        void validate() const
        {
            const int n = static_cast<int>(actions.size());
            for (std::size_t s = 0; s < actions.size(); ++s)
            {
                if (actions[s].empty())
                    throw std::invalid_argument("FiniteMdp: state " + std::to_string(s) + " has no actions");
                for (const auto &a : actions[s])
                {
                    double sum = 0.0;
                    for (const auto &o : a.outcomes)
                    {
                        if (o.next < -1 || o.next >= n || !(o.prob >= 0.0) || !std::isfinite(o.reward))
                            throw std::invalid_argument("FiniteMdp: bad outcome in state " + std::to_string(s));
                        sum += o.prob;
                    }
                    if (std::abs(sum - 1.0) > 1e-9)
                        throw std::invalid_argument("FiniteMdp: outcome probabilities of state " +
                                                    std::to_string(s) + " do not sum to 1");
                }
            }
            double sum = 0.0;
            for (const auto &[s, p] : restart)
            {
                if (s < 0 || s >= n || !(p >= 0.0))
                    throw std::invalid_argument("FiniteMdp: bad restart entry");
                sum += p;
            }
            if (!restart.empty() && std::abs(sum - 1.0) > 1e-9)
                throw std::invalid_argument("FiniteMdp: restart distribution does not sum to 1");
        }
    };

    struct QStar
    {
        std::vector<std::vector<double>> q; // q[s][i] for the i-th action of s
        std::vector<int> greedy;            // index of the first maximizing action
        int iterations = 0;
    };

    // Value iteration on Q until the max-norm change drops below tol.
    inline QStar q_star(const FiniteMdp &mdp, double gamma, double tol, int max_iterations = 1000000)
    {
        if (!(tol > 0.0))
            throw std::invalid_argument("q_star: tol must be positive");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw std::invalid_argument("q_star: gamma must lie in [0,1)");
        mdp.validate();

        const std::size_t n = mdp.num_states();
        QStar out;
        out.q.resize(n);
        for (std::size_t s = 0; s < n; ++s)
            out.q[s].assign(mdp.actions[s].size(), 0.0);
        std::vector<double> v(n, 0.0);

        for (int it = 1; it <= max_iterations; ++it)
        {
            double change = 0.0;
            for (std::size_t s = 0; s < n; ++s)
            {
                for (std::size_t i = 0; i < mdp.actions[s].size(); ++i)
                {
                    double q = 0.0;
                    for (const auto &o : mdp.actions[s][i].outcomes)
                    {
                        q += o.prob * (o.reward + (o.next < 0 ? 0.0 : gamma * v[static_cast<std::size_t>(o.next)]));
                    }
                    change = std::max(change, std::abs(q - out.q[s][i]));
                    out.q[s][i] = q;
                }
            }
            for (std::size_t s = 0; s < n; ++s)
                v[s] = *std::max_element(out.q[s].begin(), out.q[s].end());
            out.iterations = it;
            if (change < tol)
                break;
            if (it == max_iterations)
                throw std::runtime_error("q_star: no convergence");
        }
        out.greedy.resize(n);
        for (std::size_t s = 0; s < n; ++s)
        {
            out.greedy[s] =
                static_cast<int>(std::max_element(out.q[s].begin(), out.q[s].end()) - out.q[s].begin());
        }
        return out;
    }

    // -------------------------------------------------------------------------
    // Chains.

    using DenseMatrix = Eigen::MatrixXd;
    using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
    using Graph = std::vector<std::vector<int>>;

    inline Graph support_graph(const DenseMatrix &p)
    {
        Graph g(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j)
                if (p(i, j) > 0.0)
                    g[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
        return g;
    }

    inline Graph support_graph(const SparseMatrix &p)
    {
        Graph g(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.outerSize(); ++i)
            for (SparseMatrix::InnerIterator it(p, i); it; ++it)
                if (it.value() > 0.0)
                    g[static_cast<std::size_t>(i)].push_back(static_cast<int>(it.col()));
        return g;
    }

    // Strongly connected components (iterative Tarjan). Each component is
    // sorted; components are ordered by their smallest member.
    inline std::vector<std::vector<int>> strongly_connected_components(const Graph &g)
    {
        const int n = static_cast<int>(g.size());
        std::vector<int> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
        std::vector<char> on_stack(static_cast<std::size_t>(n), 0);
        std::vector<int> stack;
        std::vector<std::vector<int>> comps;
        int counter = 0;

        struct Frame
        {
            int v;
            std::size_t edge;
        };
        std::vector<Frame> call;
        for (int root = 0; root < n; ++root)
        {
            if (index[static_cast<std::size_t>(root)] >= 0)
                continue;
            call.push_back({root, 0});
            while (!call.empty())
            {
                Frame &f = call.back();
                const auto v = static_cast<std::size_t>(f.v);
                if (f.edge == 0 && index[v] < 0)
                {
                    index[v] = low[v] = counter++;
                    stack.push_back(f.v);
                    on_stack[v] = 1;
                }
                if (f.edge < g[v].size())
                {
                    const int w = g[v][f.edge++];
                    const auto wu = static_cast<std::size_t>(w);
                    if (index[wu] < 0)
                        call.push_back({w, 0});
                    else if (on_stack[wu])
                        low[v] = std::min(low[v], index[wu]);
                    continue;
                }
                if (low[v] == index[v])
                {
                    std::vector<int> comp;
                    int w;
                    do
                    {
                        w = stack.back();
                        stack.pop_back();
                        on_stack[static_cast<std::size_t>(w)] = 0;
                        comp.push_back(w);
                    } while (w != f.v);
                    std::sort(comp.begin(), comp.end());
                    comps.push_back(std::move(comp));
                }
                const int done = f.v;
                call.pop_back();
                if (!call.empty())
                {
                    const auto parent = static_cast<std::size_t>(call.back().v);
                    low[parent] = std::min(low[parent], low[static_cast<std::size_t>(done)]);
                }
            }
        }
        std::sort(comps.begin(), comps.end(), [](const auto &a, const auto &b) { return a.front() < b.front(); });
        return comps;
    }

    template <class Matrix>
    std::vector<std::vector<int>> communicating_classes(const Matrix &p)
    {
        return strongly_connected_components(support_graph(p));
    }

    template <class Matrix>
    bool irreducible(const Matrix &p)
    {
        const auto classes = communicating_classes(p);
        return classes.size() == 1 && classes.front().size() == static_cast<std::size_t>(p.rows());
    }

    struct ClosedClass
    {
        std::vector<int> states;
        int period = 1;
    };

    // Classes with no edge leaving them, with their periods.
    inline std::vector<ClosedClass> closed_classes(const Graph &g)
    {
        const auto comps = strongly_connected_components(g);
        std::vector<int> comp_of(g.size(), -1);
        for (std::size_t c = 0; c < comps.size(); ++c)
            for (int v : comps[c])
                comp_of[static_cast<std::size_t>(v)] = static_cast<int>(c);

        std::vector<ClosedClass> out;
        for (std::size_t c = 0; c < comps.size(); ++c)
        {
            bool closed = true;
            for (int v : comps[c])
                for (int w : g[static_cast<std::size_t>(v)])
                    closed = closed && comp_of[static_cast<std::size_t>(w)] == static_cast<int>(c);
            if (!closed)
                continue;

            // Period = gcd of level(u) + 1 - level(v) over edges inside the class.
            std::vector<int> level(g.size(), -1);
            std::vector<int> queue{comps[c].front()};
            level[static_cast<std::size_t>(comps[c].front())] = 0;
            for (std::size_t head = 0; head < queue.size(); ++head)
            {
                const int u = queue[head];
                for (int w : g[static_cast<std::size_t>(u)])
                {
                    if (level[static_cast<std::size_t>(w)] < 0)
                    {
                        level[static_cast<std::size_t>(w)] = level[static_cast<std::size_t>(u)] + 1;
                        queue.push_back(w);
                    }
                }
            }
            int period = 0;
            for (int u : comps[c])
                for (int w : g[static_cast<std::size_t>(u)])
                    period = std::gcd(period, std::abs(level[static_cast<std::size_t>(u)] + 1 -
                                                       level[static_cast<std::size_t>(w)]));
            out.push_back(ClosedClass{comps[c], std::max(period, 1)});
        }
        return out;
    }

    inline void require_stochastic(const DenseMatrix &p, const char *who)
    {
        if (p.rows() != p.cols() || p.rows() == 0)
            throw std::invalid_argument(std::string(who) + ": matrix must be square and nonempty");
        for (Eigen::Index i = 0; i < p.rows(); ++i)
        {
            if ((p.row(i).array() < 0.0).any() || !p.row(i).allFinite() || std::abs(p.row(i).sum() - 1.0) > 1e-9)
                throw std::invalid_argument(std::string(who) + ": row " + std::to_string(i) + " is not stochastic");
        }
    }

    inline void require_stochastic(const SparseMatrix &p, const char *who)
    {
        if (p.rows() != p.cols() || p.rows() == 0)
            throw std::invalid_argument(std::string(who) + ": matrix must be square and nonempty");
        for (Eigen::Index i = 0; i < p.outerSize(); ++i)
        {
            double sum = 0.0;
            for (SparseMatrix::InnerIterator it(p, i); it; ++it)
            {
                if (!(it.value() >= 0.0) || !std::isfinite(it.value()))
                    throw std::invalid_argument(std::string(who) + ": negative or non-finite entry");
                sum += it.value();
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw std::invalid_argument(std::string(who) + ": row " + std::to_string(i) + " is not stochastic");
        }
    }

    // Least common multiple of the periods of all closed classes.
    template <class Matrix>
    long long cyclic_order(const Matrix &p)
    {
        long long l = 1;
        for (const auto &c : closed_classes(support_graph(p)))
        {
            l = std::lcm(l, static_cast<long long>(c.period));
            if (l > (1LL << 20))
                throw std::runtime_error("cesaro: chain period too large");
        }
        return l;
    }

    // Limit of (1/N) sum_{n<N} P^n.
    //
    // With L the lcm of the periods of the closed classes, the block average
    // A = (1/L) sum_{1<=n<=L} P^n has 1 as its only unit-modulus eigenvalue, so
    // A^m converges to the same limit; it is approached by repeated squaring.
    // `max_terms` bounds the number of matrix products.
    inline DenseMatrix cesaro_limit(const DenseMatrix &p, double tol = 1e-12, int max_terms = 200)
    {
        require_stochastic(p, "cesaro_limit");
        if (!(tol > 0.0))
            throw std::invalid_argument("cesaro_limit: tol must be positive");
        const long long l = cyclic_order(p);
        const Eigen::Index n = p.rows();

        // sum_{n<L} P^n by binary doubling.
        int products = 0;
        DenseMatrix sum = DenseMatrix::Zero(n, n);
        DenseMatrix power = DenseMatrix::Identity(n, n); // P^(terms in sum)
        DenseMatrix block_sum = DenseMatrix::Identity(n, n);
        DenseMatrix block_pow = p; // for block of size m: sum_{n<m} P^n and P^m
        long long remaining = l;
        while (remaining > 0)
        {
            if (remaining & 1)
            {
                sum += power * block_sum;
                power = power * block_pow;
                products += 2;
            }
            remaining >>= 1;
            if (remaining > 0)
            {
                block_sum = block_sum + block_pow * block_sum;
                block_pow = block_pow * block_pow;
                products += 2;
            }
        }
        DenseMatrix a = p * sum / static_cast<double>(l);
        ++products;

        for (;;)
        {
            if (products >= max_terms)
                throw std::runtime_error("cesaro_limit: no convergence within max_terms");
            DenseMatrix next = a * a;
            ++products;
            const double diff = (next - a).cwiseAbs().maxCoeff();
            a = std::move(next);
            if (diff < tol)
                break;
        }
        // Remove rounding drift in the row sums.
        for (Eigen::Index i = 0; i < n; ++i)
            a.row(i) /= a.row(i).sum();
        return a;
    }

    // Cesaro limit applied to vectors: returns Lbar * x for every x in xs,
    // without forming Lbar. Suited to large sparse chains.
    inline std::vector<Eigen::VectorXd> cesaro_apply(const SparseMatrix &p, std::vector<Eigen::VectorXd> xs,
                                                     double tol = 1e-12, long long max_terms = 50000000)
    {
        require_stochastic(p, "cesaro_apply");
        const long long l = cyclic_order(p);
        long long terms = 0;
        for (auto &x : xs)
        {
            if (x.size() != p.rows())
                throw std::invalid_argument("cesaro_apply: vector size mismatch");
        }
        for (;;)
        {
            double diff = 0.0;
            double scale = 1.0;
            for (auto &x : xs)
            {
                Eigen::VectorXd cur = x;
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
                for (long long k = 0; k < l; ++k)
                {
                    cur = p * cur;
                    acc += cur;
                }
                acc /= static_cast<double>(l);
                diff = std::max(diff, (acc - x).cwiseAbs().maxCoeff());
                scale = std::max(scale, acc.cwiseAbs().maxCoeff());
                x = std::move(acc);
            }
            terms += l;
            if (diff < tol * scale)
                return xs;
            if (terms >= max_terms)
                throw std::runtime_error("cesaro_apply: no convergence within max_terms");
        }
    }
} // namespace beamql
