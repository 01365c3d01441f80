"""Tiny LLVM-level primitives for the shared-memory kernels.

numba exposes no CPU compare-and-exchange, so these intrinsics emit the
``cmpxchg`` / atomic load / atomic store instructions directly.
"""
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

_I64 = ir.IntType(64)


def _item_ptr(context, builder, aryty, ary, idx, idxty):
    arr = context.make_array(aryty)(context, builder, ary)
    idx = context.cast(builder, idx, idxty, types.intp)
    return cgutils.get_item_pointer(context, builder, aryty, arr, [idx], wraparound=False)


@intrinsic
def cas_f64(typingctx, arr, idx, expected, desired):
    """Atomically replace ``arr[idx]`` by ``desired`` if its bits equal ``expected``."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.float64):
        return None
    sig = types.boolean(arr, idx, types.float64, types.float64)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1], signature.args[1])
        iptr = builder.bitcast(ptr, _I64.as_pointer())
        old = builder.bitcast(args[2], _I64)
        new = builder.bitcast(args[3], _I64)
        res = builder.cmpxchg(iptr, old, new, "seq_cst", "seq_cst")
        return builder.extract_value(res, 1)

    return sig, codegen


@intrinsic
def cas_i64(typingctx, arr, idx, expected, desired):
    if not (isinstance(arr, types.Array) and arr.dtype == types.int64):
        return None
    sig = types.boolean(arr, idx, types.int64, types.int64)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1], signature.args[1])
        res = builder.cmpxchg(ptr, args[2], args[3], "seq_cst", "seq_cst")
        return builder.extract_value(res, 1)

    return sig, codegen


@intrinsic
def load_i64(typingctx, arr, idx):
    if not (isinstance(arr, types.Array) and arr.dtype == types.int64):
        return None
    sig = types.int64(arr, idx)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1], signature.args[1])
        return builder.load_atomic(ptr, "seq_cst", 8)

    return sig, codegen


@intrinsic
def store_i64(typingctx, arr, idx, value):
    if not (isinstance(arr, types.Array) and arr.dtype == types.int64):
        return None
    sig = types.void(arr, idx, types.int64)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1], signature.args[1])
        builder.store_atomic(args[2], ptr, "seq_cst", 8)
        return context.get_dummy_value()

    return sig, codegen


@intrinsic
def sched_yield(typingctx):
    sig = types.int32()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(32), [])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "sched_yield")
        return builder.call(fn, [])

    return sig, codegen


@njit(cache=True, nogil=True)
def spin_acquire(lock):
    while not cas_i64(lock, 0, 0, 1):
        sched_yield()


@njit(cache=True, nogil=True)
def spin_release(lock):
    store_i64(lock, 0, 0)


@njit(cache=True, nogil=True)
def atomic_add_f64(arr, idx, delta):
    """CAS retry loop; used by the AIG torture test."""
    while True:
        old = arr[idx]
        if cas_f64(arr, idx, old, old + delta):
            return
