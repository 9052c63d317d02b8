#pragma once

// Umbrella header for the weylkdv library.

#include "weylkdv/canonical.hpp"
#include "weylkdv/diagnostics.hpp"
#include "weylkdv/errors.hpp"
#include "weylkdv/evolution.hpp"
#include "weylkdv/explicit.hpp"
#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"
#include "weylkdv/residuals.hpp"
#include "weylkdv/triples.hpp"
#include "weylkdv/weyl.hpp"
