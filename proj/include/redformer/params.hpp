#pragma once

#include "redformer/autograd.hpp"

#include <random>

namespace redformer::params {

// Parameters live in float32 storage: every initial draw and every update is
// rounded to the nearest float so checkpoints reproduce them exactly.
void round_to_float(ag::Matrix& m);

// Zero-mean normal draws with standard deviation `sd`, float-rounded.
ag::Matrix normal(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng);

}  // namespace redformer::params
