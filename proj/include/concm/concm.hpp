#pragma once

#include "concm/attributes.hpp"
#include "concm/augment.hpp"
#include "concm/config.hpp"
#include "concm/error.hpp"
#include "concm/eval.hpp"
#include "concm/features.hpp"
#include "concm/geometry.hpp"
#include "concm/grad_check.hpp"
#include "concm/io.hpp"
#include "concm/layers.hpp"
#include "concm/linalg.hpp"
#include "concm/log.hpp"
#include "concm/matrix.hpp"
#include "concm/mpc.hpp"
#include "concm/optim.hpp"
#include "concm/projector.hpp"
#include "concm/rng.hpp"
#include "concm/session.hpp"
#include "concm/synth.hpp"
#include "concm/tape.hpp"
