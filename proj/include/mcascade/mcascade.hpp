#pragma once

#include "mcascade/cascade.hpp"
#include "mcascade/disorder.hpp"
#include "mcascade/errors.hpp"
#include "mcascade/invariants.hpp"
#include "mcascade/limit.hpp"
#include "mcascade/numerics.hpp"
#include "mcascade/rng.hpp"
#include "mcascade/stats.hpp"
#include "mcascade/vertex.hpp"
