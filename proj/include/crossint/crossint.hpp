#pragma once

#include "crossint/core.hpp"
#include "crossint/normal.hpp"
#include "crossint/lattice.hpp"
#include "crossint/covmodel.hpp"
#include "crossint/mvnexp.hpp"
#include "crossint/crossings.hpp"
#include "crossint/iia.hpp"
#include "crossint/deps.hpp"
#include "crossint/simlab.hpp"
#include "crossint/io.hpp"
