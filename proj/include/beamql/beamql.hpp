#pragma once

#include "beamql/config.hpp"
#include "beamql/env_model.hpp"
#include "beamql/exact_oracle.hpp"
#include "beamql/finite_mdp.hpp"
#include "beamql/harness.hpp"
#include "beamql/policies.hpp"
#include "beamql/rl_core.hpp"
#include "beamql/rng.hpp"
#include "beamql/smdp.hpp"
#include "beamql/training.hpp"
