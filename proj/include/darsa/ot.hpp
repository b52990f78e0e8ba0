#ifndef DARSA_OT_HPP
#define DARSA_OT_HPP

#include "darsa/gaussian.hpp"
#include "darsa/transport.hpp"

#endif  // DARSA_OT_HPP
