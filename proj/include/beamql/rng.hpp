#pragma once

// Random streams used by the simulator.
//
// Every draw in a simulation is keyed by what it is about (seed, vehicle,
// epoch, beam, ...) instead of being pulled from one shared sequential stream.
// Two policies run with the same seed therefore see identical beam
// realizations, and a vehicle's draws do not depend on how its events
// interleave with other vehicles.

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace beamql
{
    inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    inline constexpr std::uint64_t mix_key(std::initializer_list<std::uint64_t> parts) noexcept
    {
        std::uint64_t h = 0x243f6a8885a308d3ULL;
        for (std::uint64_t p : parts)
        {
            h = splitmix64(h ^ splitmix64(p));
        }
        return h;
    }

    // Domain tags so that keys for different kinds of draws never collide.
    enum class DrawKind : std::uint64_t
    {
        Connection = 1,
        Speed = 2,
        Arrival = 3,
        Direction = 4,
        Exploration = 5,
        ModelSampling = 6,
    };

    // Small counter-based generator satisfying UniformRandomBitGenerator.
    class KeyedStream
    {
    public:
        using result_type = std::uint64_t;

        constexpr explicit KeyedStream(std::uint64_t key) noexcept : state_(key) {}

        static constexpr result_type min() noexcept { return 0; }
        static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

        constexpr result_type operator()() noexcept
        {
            state_ += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = state_;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            return z ^ (z >> 31);
        }

    private:
        std::uint64_t state_;
    };

    inline KeyedStream keyed_stream(std::uint64_t seed, DrawKind kind, std::initializer_list<std::uint64_t> parts)
    {
        std::uint64_t h = mix_key({seed, static_cast<std::uint64_t>(kind)});
        for (std::uint64_t p : parts)
        {
            h = splitmix64(h ^ splitmix64(p));
        }
        return KeyedStream(h);
    }

    // Uniform double in [0, 1) with 53 random bits. Used instead of
    // std::uniform_real_distribution so draws are identical across standard
    // library implementations.
    template <class Rng>
    double uniform01(Rng &rng)
    {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }

    __extension__ using uint128 = unsigned __int128;

    // Uniform integer in [0, n).
    template <class Rng>
    std::uint64_t uniform_index(Rng &rng, std::uint64_t n)
    {
        // Lemire's multiply-shift; the bias is below 2^-64 * n and irrelevant here.
        return static_cast<std::uint64_t>((static_cast<uint128>(rng()) * n) >> 64);
    }

    template <class Rng>
    int uniform_int(Rng &rng, int lo, int hi)
    {
        return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
    }
} // namespace beamql
