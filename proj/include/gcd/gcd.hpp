#pragma once

#include "gcd/accuracy.hpp"
#include "gcd/class_count.hpp"
#include "gcd/common.hpp"
#include "gcd/contrastive.hpp"
#include "gcd/dataset.hpp"
#include "gcd/feature_io.hpp"
#include "gcd/hungarian.hpp"
#include "gcd/kmeans.hpp"

namespace gcd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gcd
