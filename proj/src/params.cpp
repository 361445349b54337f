#include "redformer/params.hpp"

namespace redformer::params {

void round_to_float(ag::Matrix& m) {
  m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

ag::Matrix normal(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  ag::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  round_to_float(m);
  return m;
}

}  // namespace redformer::params
