#pragma once

#include "finv/algorithm.hpp"
#include "finv/ellipsoid.hpp"
#include "finv/hybrid.hpp"
#include "finv/mvee.hpp"
#include "finv/pac.hpp"
#include "finv/rbf.hpp"
#include "finv/systems.hpp"
