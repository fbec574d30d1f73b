#pragma once

namespace dnet {

/// Keeps large freed blocks inside the process heap instead of handing them
/// back to the OS after every step. Training allocates and frees the same
/// multi-megabyte activations each batch, and without this the page faults
/// cost about as much as the arithmetic. Process-wide; call once from main().
/// No-op outside glibc.
void tune_allocator_for_training();

}  // namespace dnet
