"""Serve any Python prediction function as a batched label oracle.

The wire format is one JSON object per line over stdio or TCP:

    -> {"id":0,"op":"info"}
    <- {"id":0,"input_dim":D,"n_classes":C,"max_batch":B}
    -> {"id":k,"op":"predict","rows":R,"x_b64":"<base64 LE binary32>"}
    <- {"id":k,"labels":[l1,...,lR]}
    <- {"id":k,"error":"<message>"}

The protocol layer is standard library only; whatever framework the wrapped
prediction function uses is its own business.
"""

from .server import AdapterError, WrappedModel, serve, wrap_callable

__all__ = ["AdapterError", "WrappedModel", "serve", "wrap_callable"]

__version__ = "0.1.0"
