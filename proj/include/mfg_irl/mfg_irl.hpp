// Umbrella header.
#pragma once

#include "mfg_irl/core.hpp"
#include "mfg_irl/linalg.hpp"
#include "mfg_irl/model.hpp"
#include "mfg_irl/riccati.hpp"
#include "mfg_irl/simulator.hpp"
#include "mfg_irl/irl.hpp"
#include "mfg_irl/io.hpp"
#include "mfg_irl/config.hpp"
#include "mfg_irl/harness.hpp"
