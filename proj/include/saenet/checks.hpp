#pragma once

#include <string>
#include <vector>

#include "saenet/gradcheck.hpp"

namespace saenet {

std::vector<std::string> check_names();

// Builds a self-contained finite-difference target by name (fc, conv2d,
// conv-grouped, batchnorm, gate-*, block-*). The returned closures own their
// module and leaf storage. Every target scores the output against a fixed
// random projection, which keeps the loss linear in the output and the
// difference quotients clear of round-off at the default step.
CheckTarget<double> named_check(const std::string& name, Rng& rng);

} // namespace saenet
