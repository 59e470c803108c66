#pragma once

#include "pcem/builders.hpp"
#include "pcem/circuit.hpp"
#include "pcem/dataset.hpp"
#include "pcem/error.hpp"
#include "pcem/flows.hpp"
#include "pcem/image.hpp"
#include "pcem/inference.hpp"
#include "pcem/normalize.hpp"
#include "pcem/optimizers.hpp"
#include "pcem/oracle.hpp"
#include "pcem/serialize.hpp"
