// Release gate: runs the full invariant suite and prints one verdict line
// per check. Exit 0 only when every check passes.
//
// --inject-fault flips the conv weight-gradient sign hook and runs only the
// gradient suite; it must FAIL (nonzero exit), proving the checker can see
// a planted bug. Wired into ctest with WILL_FAIL.

#include <cstdio>
#include <iostream>
#include <string>

#include "uhdformer/ops.hpp"
#include "uhdformer/selfcheck.hpp"

int main(int argc, char** argv) {
    bool inject = false;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--inject-fault") {
            inject = true;
        } else {
            std::fprintf(stderr, "usage: %s [--inject-fault]\n", argv[0]);
            return 2;
        }
    }

    uhd::SelfTestOptions opts;
    opts.full = true;
    opts.log = &std::cout;
    if (inject) {
        uhd::hooks::corrupt_conv_weight_grad = true;
        opts.only = "gradient-suite";
        std::cout << "fault injection armed: conv weight gradients negated\n";
    }

    const auto rep = uhd::run_selftest(opts);
    size_t passed = 0;
    for (const auto& c : rep.checks)
        if (c.pass) ++passed;
    std::printf("RESULT: %s (%zu/%zu)\n", rep.all_pass() ? "PASS" : "FAIL", passed, rep.checks.size());
    return rep.all_pass() ? 0 : 1;
}
