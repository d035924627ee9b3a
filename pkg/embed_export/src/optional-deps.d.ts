/** The transformer runtime is optional and resolved at run time only. */
declare module "@xenova/transformers";
