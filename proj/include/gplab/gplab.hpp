#pragma once

#include "gplab/core.hpp"
#include "gplab/spectral.hpp"
#include "gplab/nls.hpp"
#include "gplab/marginals.hpp"
#include "gplab/hierarchy.hpp"
#include "gplab/observables.hpp"
#include "gplab/blowup.hpp"
#include "gplab/harness.hpp"
