// Smallest end-to-end use of the library: certify an invariant ellipsoid for
// the convex expander-contractor starting from a wide circle at the origin.

#include <iostream>

#include "finv/finv.hpp"

int main() {
  const finv::systems::CecParams params;
  const finv::PoincareMap map = finv::systems::cec_poincare(params);
  const finv::Ellipsoid initial = finv::Ellipsoid::ball(finv::Vec::Zero(2), std::sqrt(10.0));

  finv::RunOptions opt;
  opt.eps_target = 0.03;
  opt.beta = 1e-9;
  opt.seed = 7;

  const auto result = finv::run(map, initial, opt);
  std::cout << "termination: " << finv::to_string(result.termination) << "\n"
            << "iterations:  " << result.history.size() << "\n"
            << "volume:      " << result.region.volume() << " (true set: "
            << finv::systems::cec_true_set(params).volume() << ")\n"
            << "epsilon*:    " << result.certificate.epsilon_star << " with beta "
            << result.certificate.beta << " over " << result.certificate.samples
            << " samples\n";
}
