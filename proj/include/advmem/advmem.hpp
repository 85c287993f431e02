#pragma once

#include "advmem/attacks.hpp"
#include "advmem/checkpoint.hpp"
#include "advmem/complexity.hpp"
#include "advmem/config.hpp"
#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/diagnostics.hpp"
#include "advmem/evaluation.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"
#include "advmem/objectives.hpp"
#include "advmem/optim.hpp"
#include "advmem/report.hpp"
#include "advmem/schedule.hpp"
#include "advmem/trainer.hpp"
