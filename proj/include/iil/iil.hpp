#pragma once

#include "iil/backbone.hpp"
#include "iil/checkpoint.hpp"
#include "iil/config.hpp"
#include "iil/data.hpp"
#include "iil/error.hpp"
#include "iil/gradcheck.hpp"
#include "iil/ii_layer.hpp"
#include "iil/monomial.hpp"
#include "iil/network.hpp"
#include "iil/sampling.hpp"
#include "iil/selection.hpp"
#include "iil/tensor.hpp"
#include "iil/train.hpp"
