#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace fourplane {

// Mix a master seed with a stream index (clip index, step index, ...) so
// derived streams are independent and reproducible.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 0x1234abcdULL));
}

// Seeded generator. Normal draws use Box-Muller rather than
// std::normal_distribution so the byte stream is identical across
// standard-library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniformf(float lo, float hi) {
        return static_cast<float>(uniform(lo, hi));
    }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    float normalf() { return static_cast<float>(normal()); }

    std::string save_state() const {
        std::ostringstream os;
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(spare_));
        std::memcpy(&bits, &spare_, sizeof(bits));
        os << eng_ << " " << (has_spare_ ? 1 : 0) << " " << bits;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int spare_flag = 0;
        uint64_t bits = 0;
        is >> eng_ >> spare_flag >> bits;
        std::memcpy(&spare_, &bits, sizeof(bits));
        has_spare_ = spare_flag != 0;
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace fourplane
