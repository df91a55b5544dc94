#pragma once

#include "grlab/algorithms.hpp"
#include "grlab/checks.hpp"
#include "grlab/config.hpp"
#include "grlab/error.hpp"
#include "grlab/io.hpp"
#include "grlab/oracle.hpp"
#include "grlab/policy.hpp"
#include "grlab/random.hpp"
#include "grlab/scheduler.hpp"
#include "grlab/tasks.hpp"
#include "grlab/trainer.hpp"
