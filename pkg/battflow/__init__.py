# battflow: multi-period AC optimal power flow with storage and EVs
# Interior point solver with Schur-complement and direct sparse-LU KKT backends
