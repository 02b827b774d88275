#ifndef BAEOED_BAEOED_HPP
#define BAEOED_BAEOED_HPP

#include "baeoed/bae_stats.hpp"
#include "baeoed/black_box.hpp"
#include "baeoed/config.hpp"
#include "baeoed/ensemble.hpp"
#include "baeoed/error.hpp"
#include "baeoed/gaussian.hpp"
#include "baeoed/oed.hpp"
#include "baeoed/parallel.hpp"
#include "baeoed/pcn.hpp"
#include "baeoed/posterior.hpp"
#include "baeoed/problems.hpp"

#endif  // BAEOED_BAEOED_HPP
