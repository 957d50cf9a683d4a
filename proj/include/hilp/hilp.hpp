#pragma once

#include "hilp/config.hpp"
#include "hilp/dataset.hpp"
#include "hilp/error.hpp"
#include "hilp/experiment.hpp"
#include "hilp/hierarchy.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/linalg.hpp"
#include "hilp/mdp.hpp"
#include "hilp/oracle.hpp"
#include "hilp/prompting.hpp"
#include "hilp/skills.hpp"
#include "hilp/theory.hpp"
