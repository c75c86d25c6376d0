#include "fourplane/diffusion.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>

namespace fourplane::diffusion {

void write_schedule_csv(const std::string& path, const NoiseSchedule& s) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("schedule csv: cannot open " + path);
    os << "t,beta,alpha_bar\n";
    os << std::setprecision(17);
    for (i64 t = 1; t <= s.steps; ++t)
        os << t << "," << s.beta[t - 1] << "," << s.alpha_bar[t - 1] << "\n";
}

} // namespace fourplane::diffusion
