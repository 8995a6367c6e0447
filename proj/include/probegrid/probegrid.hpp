#ifndef PROBEGRID_PROBEGRID_HPP
#define PROBEGRID_PROBEGRID_HPP

#include "errors.hpp"
#include "node_set.hpp"
#include "graph.hpp"
#include "feeder.hpp"
#include "probing.hpp"
#include "identify.hpp"
#include "identifiability.hpp"
#include "verify.hpp"

#endif  // PROBEGRID_PROBEGRID_HPP
