#pragma once

#include "pfpe/approximator.hpp"
#include "pfpe/linalg.hpp"
#include "pfpe/mdp.hpp"

namespace pfpe {

/**
 * Expected feature moments of a linear problem.
 *
 *   phi        = E_{d,mu}[phi(s,a) phi(s,a)^T]
 *   phi_prime  = E_{d,mu}[phi(s,a) E'[phi(s',a')]^T]
 *   b          = E_{d,mu}[r(s,a) phi(s,a)]
 *
 * With this orientation the expected TD vector is b + gamma*phi_prime*w' - phi*w.
 */
struct GramMatrices {
  Matrix phi;
  Matrix phi_prime;
  Vector b;
};

GramMatrices gram_matrices(const FiniteMdp& mdp, const FeatureMap& features, const StateDistribution& d,
                           const Policy& mu, const Policy& pi);

/// E_{s'~P^mu, a'~pi}[phi(s',a') phi(s',a')^T].
Matrix lookahead_gram(const FiniteMdp& mdp, const FeatureMap& features, const StateDistribution& d,
                      const Policy& mu, const Policy& pi);

}  // namespace pfpe
