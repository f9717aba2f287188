#pragma once

#include "manr/autodiff.hpp"
#include "manr/baselines.hpp"
#include "manr/datagen.hpp"
#include "manr/errors.hpp"
#include "manr/game.hpp"
#include "manr/inference.hpp"
#include "manr/io.hpp"
#include "manr/models.hpp"
#include "manr/optim.hpp"
#include "manr/rng.hpp"
#include "manr/routing.hpp"
#include "manr/training.hpp"
